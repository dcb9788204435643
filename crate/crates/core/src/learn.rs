//! TD(0), regularised TD(0), Polyak averaging and the residual-gradient
//! family, plus the training loop.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::features::{FeatureMap, Theta};
use crate::model::ModelSpec;
use crate::observe::{CountSchedule, Observation, ObservationMode, ObservationStream, Schedule, StationarySampler};
use crate::rng::{NoiseLaw, RngStream};
use crate::stats::Welford;
use crate::td::{minibatch_td, multistep_td, stochastic_unchecked, td_kernel, NoiseOptions, TdValue};

/// Iterates beyond this norm are treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Td0,
    Rg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TdVariant {
    Standard,
    Stochastic,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RgExtension {
    None,
    /// `n_k` consecutive transitions per update.
    Multistep(CountSchedule),
    /// Diffusion multiplier `sigma_k` applied to the dynamics.
    SigmaSchedule(Schedule),
    /// `N_k` independent transitions from the same state per update.
    Minibatch(CountSchedule),
    /// Rotated Rademacher transition noise.
    Rademacher,
}

impl RgExtension {
    pub fn name(&self) -> &'static str {
        match self {
            RgExtension::None => "none",
            RgExtension::Multistep(_) => "multistep",
            RgExtension::SigmaSchedule(_) => "sigma",
            RgExtension::Minibatch(_) => "minibatch",
            RgExtension::Rademacher => "rademacher",
        }
    }
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                match self {
                    $($ty::$variant => f.write_str($name),)+
                }
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Algorithm { Td0 => "td0", Rg => "rg" });
keyword_enum!(TdVariant { Standard => "standard", Stochastic => "stochastic" });

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerConfig {
    pub algorithm: Algorithm,
    pub variant: TdVariant,
    pub mu: f64,
    pub ball_radius: Option<f64>,
    /// Report and return the Polyak average instead of the last iterate.
    pub averaging: bool,
    pub lr: Schedule,
    pub rg_extension: RgExtension,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            algorithm: Algorithm::Td0,
            variant: TdVariant::Stochastic,
            mu: 0.0,
            ball_radius: None,
            averaging: false,
            lr: Schedule::Power { c: 2.0, a: 1.0 },
            rg_extension: RgExtension::None,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be finite and >= 0, got {}", self.mu)));
        }
        if let Some(m) = self.ball_radius {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config(format!("ball radius must be positive, got {m}")));
            }
        }
        self.lr.validate()?;
        if let RgExtension::SigmaSchedule(s) = &self.rg_extension {
            s.validate()?;
        }
        if self.algorithm == Algorithm::Td0 && self.rg_extension != RgExtension::None {
            return Err(Error::Config("RG extensions require algorithm = rg".into()));
        }
        if self.rg_extension != RgExtension::None && self.variant == TdVariant::Standard {
            return Err(Error::Config("RG extensions require the stochastic variant".into()));
        }
        Ok(())
    }

    /// Checks `M >= min(M0, |r|_inf / mu)` when both regularisation and
    /// projection are on.
    pub fn check_radius(&self, reward_sup: f64, m0: f64) -> Result<()> {
        if let (Some(m), true) = (self.ball_radius, self.mu > 0.0) {
            let floor = m0.min(reward_sup / self.mu);
            if m < floor {
                return Err(Error::Config(format!(
                    "ball radius {m} is below the admissible floor {floor}"
                )));
            }
        }
        Ok(())
    }
}

/// Regularisation that balances bias against variance for a budget of
/// `k_total` iterations: `K^(-1/6)` for the standard and `K^(-1/4)` for the
/// stochastic temporal difference.
pub fn balanced_mu(variant: TdVariant, k_total: u64) -> f64 {
    let k = k_total.max(1) as f64;
    match variant {
        TdVariant::Standard => k.powf(-1.0 / 6.0),
        TdVariant::Stochastic => k.powf(-0.25),
    }
}

/// Iteration counts at which the training loop records the metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogGrid {
    /// Powers of two.
    Geometric,
    /// `round(10^(j/n))` for `j = 0, 1, ...`.
    PerDecade(u32),
    /// Every `step` iterations.
    Linear(u64),
}

impl LogGrid {
    /// Sorted, deduplicated points in `[1, k_max]`, always including `k_max`.
    pub fn points(&self, k_max: u64) -> Vec<u64> {
        let mut out = Vec::new();
        if k_max == 0 {
            return out;
        }
        match *self {
            LogGrid::Geometric => {
                let mut k = 1u64;
                while k <= k_max {
                    out.push(k);
                    k = match k.checked_mul(2) {
                        Some(v) => v,
                        None => break,
                    };
                }
            }
            LogGrid::PerDecade(n) => {
                let n = n.max(1) as f64;
                for j in 0.. {
                    let k = 10f64.powf(j as f64 / n).round();
                    if k > k_max as f64 {
                        break;
                    }
                    out.push(k as u64);
                }
            }
            LogGrid::Linear(step) => {
                let step = step.max(1);
                out.extend((1..=k_max / step).map(|i| i * step));
            }
        }
        out.push(k_max);
        out.sort_unstable();
        out.dedup();
        out
    }
}

impl fmt::Display for LogGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogGrid::Geometric => f.write_str("geometric"),
            LogGrid::PerDecade(n) => write!(f, "per_decade({n})"),
            LogGrid::Linear(s) => write!(f, "linear({s})"),
        }
    }
}

impl FromStr for LogGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "geometric" {
            return Ok(LogGrid::Geometric);
        }
        let arg = |prefix: &str| {
            s.strip_prefix(prefix)
                .and_then(|r| r.strip_prefix('('))
                .and_then(|r| r.strip_suffix(')'))
                .map(str::trim)
        };
        if let Some(n) = arg("per_decade") {
            return n
                .parse()
                .ok()
                .filter(|&n: &u32| n > 0)
                .map(LogGrid::PerDecade)
                .ok_or_else(|| Error::Config(format!("bad per_decade count in `{s}`")));
        }
        if let Some(n) = arg("linear") {
            return n
                .parse()
                .ok()
                .filter(|&n: &u64| n > 0)
                .map(LogGrid::Linear)
                .ok_or_else(|| Error::Config(format!("bad linear step in `{s}`")));
        }
        Err(Error::Config(format!("unknown log grid `{s}`")))
    }
}

/// Error metric recorded along training.
#[derive(Clone, Debug, PartialEq)]
pub enum ErrorMetric {
    /// `|theta - reference|^2`.
    ParamMse { reference: Theta },
    /// `(theta - reference)^T S (theta - reference)` for the ell-loss matrix `S`.
    EllLoss { reference: Theta, matrix: DMatrix<f64> },
}

impl ErrorMetric {
    pub fn reference(&self) -> &Theta {
        match self {
            ErrorMetric::ParamMse { reference } | ErrorMetric::EllLoss { reference, .. } => reference,
        }
    }

    pub fn evaluate(&self, theta: &[f64]) -> f64 {
        match self {
            ErrorMetric::ParamMse { reference } => theta
                .iter()
                .zip(reference.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
            ErrorMetric::EllLoss { reference, matrix } => {
                let u: Vec<f64> = theta.iter().zip(reference.as_slice()).map(|(a, b)| a - b).collect();
                let n = u.len();
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        acc += u[i] * matrix[(i, j)] * u[j];
                    }
                }
                acc
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnerState {
    pub theta: Theta,
    /// Mean of `theta_0, ..., theta_{k-1}`; equals `theta_0` while `k = 0`.
    pub theta_bar: Theta,
    pub k: u64,
    pub error_log: Vec<(u64, f64)>,
}

impl LearnerState {
    pub fn new(theta0: Theta) -> Self {
        LearnerState {
            theta_bar: theta0.clone(),
            theta: theta0,
            k: 0,
            error_log: Vec::new(),
        }
    }

    /// The iterate the configuration reports on.
    pub fn reported(&self, config: &LearnerConfig) -> &Theta {
        if config.averaging && self.k > 0 {
            &self.theta_bar
        } else {
            &self.theta
        }
    }
}

/// Euclidean projection onto the closed ball of radius `m`.
pub fn project_ball(theta: &Theta, m: f64) -> Result<Theta> {
    if !(m > 0.0) {
        return Err(Error::domain(format!("ball radius must be positive, got {m}")));
    }
    let mut out = theta.clone();
    project_in_place(out.as_mut_slice(), m);
    Ok(out)
}

fn project_in_place(theta: &mut [f64], m: f64) {
    let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > m {
        let s = m / norm;
        theta.iter_mut().for_each(|v| *v *= s);
    }
}

/// Applies `theta <- Pi(theta - alpha (delta g + mu theta))`, updating the
/// running average with the pre-update iterate.
fn apply_update(state: &mut LearnerState, config: &LearnerConfig, alpha: f64, delta: f64, g: &[f64]) -> Result<()> {
    let k = state.k;
    let w = 1.0 / (k + 1) as f64;
    let theta = state.theta.as_mut_slice();
    let bar = state.theta_bar.as_mut_slice();
    for i in 0..theta.len() {
        if k == 0 {
            bar[i] = theta[i];
        } else {
            bar[i] += (theta[i] - bar[i]) * w;
        }
        theta[i] -= alpha * (delta * g[i] + config.mu * theta[i]);
    }
    if let Some(m) = config.ball_radius {
        project_in_place(theta, m);
    }
    state.k += 1;
    let norm = state.theta.norm();
    if !(norm <= DIVERGENCE_NORM) {
        return Err(Error::Divergence { k: state.k, norm });
    }
    Ok(())
}

fn td_for(obs: &Observation, theta: &[f64], phi: &dyn FeatureMap, model: &ModelSpec, variant: TdVariant) -> TdValue {
    match variant {
        TdVariant::Standard => td_kernel(obs, theta, phi, model.rho(), None),
        TdVariant::Stochastic => stochastic_unchecked(obs, theta, phi, model),
    }
}

fn check_inputs(state: &LearnerState, obs: &Observation, phi: &dyn FeatureMap, model: &ModelSpec) -> Result<()> {
    check_dim(phi.num_features(), state.theta.len())?;
    check_dim(model.dim(), obs.x.dim())?;
    check_dim(phi.state_dim(), obs.x.dim())?;
    if !(obs.dt > 0.0) {
        return Err(Error::domain(format!("time step must be positive, got {}", obs.dt)));
    }
    Ok(())
}

/// One (regularised) TD(0) step: direction `delta phi(X) + mu theta`.
pub fn td0_step(
    state: &mut LearnerState,
    obs: &Observation,
    phi: &dyn FeatureMap,
    model: &ModelSpec,
    config: &LearnerConfig,
) -> Result<()> {
    check_inputs(state, obs, phi, model)?;
    let alpha = config.lr.at(state.k);
    let td = td_for(obs, state.theta.as_slice(), phi, model, config.variant);
    apply_update(state, config, alpha, td.delta, &td.phi_x)
}

/// One residual-gradient step on a given observation: direction
/// `delta grad_theta(delta) + mu theta`.
pub fn rg_step(
    state: &mut LearnerState,
    obs: &Observation,
    phi: &dyn FeatureMap,
    model: &ModelSpec,
    config: &LearnerConfig,
) -> Result<()> {
    check_inputs(state, obs, phi, model)?;
    let alpha = config.lr.at(state.k);
    let td = td_for(obs, state.theta.as_slice(), phi, model, config.variant);
    apply_update(state, config, alpha, td.delta, &td.grad_theta)
}

/// Residual-gradient step whose temporal difference is generated by one of
/// the extensions from the state `x`.
pub fn rg_step_generated<R: rand::Rng + ?Sized>(
    state: &mut LearnerState,
    x: &crate::torus::TorusPoint,
    dt: f64,
    phi: &dyn FeatureMap,
    model: &ModelSpec,
    config: &LearnerConfig,
    rng: &mut R,
) -> Result<()> {
    let k = state.k;
    let alpha = config.lr.at(k);
    let gaussian = NoiseOptions::default();
    let td = match &config.rg_extension {
        RgExtension::None => multistep_td(model, x, &state.theta, phi, dt, 1, gaussian, rng)?,
        RgExtension::Multistep(n) => multistep_td(model, x, &state.theta, phi, dt, n.at(k), gaussian, rng)?,
        RgExtension::Minibatch(n) => minibatch_td(model, x, &state.theta, phi, dt, n.at(k), gaussian, rng)?,
        RgExtension::SigmaSchedule(s) => {
            let noise = NoiseOptions {
                law: NoiseLaw::Gaussian,
                diffusion_scale: s.at(k),
            };
            multistep_td(model, x, &state.theta, phi, dt, 1, noise, rng)?
        }
        RgExtension::Rademacher => {
            let noise = NoiseOptions {
                law: NoiseLaw::RademacherRotated,
                diffusion_scale: 1.0,
            };
            multistep_td(model, x, &state.theta, phi, dt, 1, noise, rng)?
        }
    };
    apply_update(state, config, alpha, td.delta, &td.grad_theta)
}

/// Everything the loop needs besides the learner itself.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub dt: Schedule,
    pub mode: ObservationMode,
    pub sampler: StationarySampler,
    pub k_max: u64,
    pub log_grid: LogGrid,
    /// Accumulate per-coordinate statistics of `theta_k` for `k >= from`.
    pub trailing_from: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub state: LearnerState,
    /// Per-coordinate statistics of the raw iterates in the trailing window.
    pub trailing: Vec<Welford>,
    /// Iteration at which the run diverged; the state and log stop there.
    pub diverged_at: Option<u64>,
}

/// Runs `k_max` iterations from `theta = 0`, logging `metric` on the
/// reported iterate at the points of the log grid.
pub fn train(
    model: &ModelSpec,
    phi: &dyn FeatureMap,
    config: &LearnerConfig,
    options: &TrainOptions,
    metric: &ErrorMetric,
    stream: &RngStream,
) -> Result<TrainOutput> {
    let (out, divergence) = run_loop(model, phi, config, options, metric, stream)?;
    match divergence {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Like [`train`], but a divergence ends the run early instead of failing;
/// the output records where it happened.
pub fn train_until_divergence(
    model: &ModelSpec,
    phi: &dyn FeatureMap,
    config: &LearnerConfig,
    options: &TrainOptions,
    metric: &ErrorMetric,
    stream: &RngStream,
) -> Result<TrainOutput> {
    run_loop(model, phi, config, options, metric, stream).map(|(out, _)| out)
}

fn run_loop(
    model: &ModelSpec,
    phi: &dyn FeatureMap,
    config: &LearnerConfig,
    options: &TrainOptions,
    metric: &ErrorMetric,
    stream: &RngStream,
) -> Result<(TrainOutput, Option<Error>)> {
    config.validate()?;
    options.dt.validate()?;
    check_dim(phi.num_features(), metric.reference().len())?;
    check_dim(model.dim(), phi.state_dim())?;
    let generated = config.algorithm == Algorithm::Rg && config.rg_extension != RgExtension::None;
    if generated && options.mode != ObservationMode::Simulator {
        return Err(Error::Config("RG extensions need simulator observations".into()));
    }
    if let ErrorMetric::EllLoss { matrix, .. } = metric {
        check_dim(phi.num_features(), matrix.nrows())?;
        check_dim(phi.num_features(), matrix.ncols())?;
    }

    let mut state = LearnerState::new(Theta::zeros(phi.num_features()));
    let mut trailing = vec![Welford::new(); phi.num_features()];
    let log_at = options.log_grid.points(options.k_max);
    let mut next_log = log_at.iter().copied().peekable();
    let mut obs_stream = ObservationStream::new(model, options.sampler, options.dt, options.mode, stream)?;

    let mut divergence = None;
    while state.k < options.k_max {
        let step = if generated {
            let (x, dt) = obs_stream.next_input();
            rg_step_generated(&mut state, &x, dt, phi, model, config, obs_stream.noise_rng())
        } else {
            let obs = obs_stream.next().expect("observation stream is infinite");
            let theta = state.theta.as_slice();
            let td = td_for(&obs, theta, phi, model, config.variant);
            let alpha = config.lr.at(state.k);
            let g = match config.algorithm {
                Algorithm::Td0 => &td.phi_x,
                Algorithm::Rg => &td.grad_theta,
            };
            apply_update(&mut state, config, alpha, td.delta, g)
        };
        match step {
            Ok(()) => {}
            Err(e @ Error::Divergence { .. }) => {
                divergence = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
        if options.trailing_from.is_some_and(|from| state.k >= from) {
            for (w, v) in trailing.iter_mut().zip(state.theta.as_slice()) {
                w.add(*v);
            }
        }
        if next_log.peek() == Some(&state.k) {
            next_log.next();
            let value = if config.averaging {
                metric.evaluate(state.theta_bar.as_slice())
            } else {
                metric.evaluate(state.theta.as_slice())
            };
            state.error_log.push((state.k, value));
        }
    }
    let diverged_at = match divergence {
        Some(Error::Divergence { k, .. }) => Some(k),
        _ => None,
    };
    Ok((
        TrainOutput {
            state,
            trailing,
            diverged_at,
        },
        divergence,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::fourier_features;
    use crate::model::BenchmarkModel;
    use crate::torus::TorusPoint;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn bench_model() -> BenchmarkModel {
        BenchmarkModel::new(1.0, 0.1).unwrap()
    }

    fn p(x: f64) -> TorusPoint {
        TorusPoint::scalar(x).unwrap()
    }

    fn obs(x: f64, x_next: f64, dt: f64, reward: f64) -> Observation {
        Observation {
            dt,
            x: p(x),
            x_next: p(x_next),
            reward,
        }
    }

    fn cfg(algorithm: Algorithm, lr: f64) -> LearnerConfig {
        LearnerConfig {
            algorithm,
            lr: Schedule::Constant { c: lr },
            ..LearnerConfig::default()
        }
    }

    #[test]
    fn projection_examples() {
        let inside = Theta::from(vec![0.3, 0.4, 0.0]);
        assert_eq!(project_ball(&inside, 1.0).unwrap(), inside);
        let out = project_ball(&Theta::from(vec![3.0, 4.0, 0.0]), 1.0).unwrap();
        assert!((out.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((out.as_slice()[1] - 0.8).abs() < 1e-15);
        assert_eq!(out.as_slice()[2], 0.0);
        assert!(project_ball(&inside, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_bounded(v in proptest::collection::vec(-50.0f64..50.0, 1..6), m in 0.01f64..10.0) {
            let once = project_ball(&Theta::from(v), m).unwrap();
            prop_assert!(once.norm() <= m * (1.0 + 1e-12));
            let twice = project_ball(&once, m).unwrap();
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12 * m);
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_theta_unchanged() {
        let m = bench_model();
        let phi = fourier_features();
        let o = obs(0.1, 0.2, 0.01, 1.0);
        for algorithm in [Algorithm::Td0, Algorithm::Rg] {
            let config = LearnerConfig {
                lr: Schedule::Constant { c: 0.0 },
                ..cfg(algorithm, 0.1)
            };
            let mut s = LearnerState::new(Theta::from(vec![0.1, 0.2, 0.3]));
            match algorithm {
                Algorithm::Td0 => td0_step(&mut s, &o, &phi, m.spec(), &config).unwrap(),
                Algorithm::Rg => rg_step(&mut s, &o, &phi, m.spec(), &config).unwrap(),
            }
            assert_eq!(s.theta.as_slice(), &[0.1, 0.2, 0.3]);
            assert_eq!(s.k, 1);
        }
    }

    #[test]
    fn regularisation_shrinks_when_delta_vanishes() {
        // zero reward, x' = x = 0 and theta . phi(0) = 0: delta is exactly zero
        let model = bench_model().spec().clone();
        let phi = fourier_features();
        let config = LearnerConfig {
            mu: 5.0,
            lr: Schedule::Constant { c: 0.1 },
            ball_radius: Some(0.2),
            variant: TdVariant::Standard,
            ..LearnerConfig::default()
        };
        let theta0 = vec![0.3, 0.7, -0.3];
        let mut s = LearnerState::new(Theta::from(theta0.clone()));
        td0_step(&mut s, &obs(0.0, 0.0, 0.01, 0.0), &phi, &model, &config).unwrap();
        let shrunk = Theta::from(theta0.iter().map(|v| v * 0.5).collect::<Vec<_>>());
        let expected = project_ball(&shrunk, 0.2).unwrap();
        for (a, b) in s.theta.as_slice().iter().zip(expected.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn value_parameters_on_noiseless_model_move_by_order_alpha_dt() {
        // deterministic dynamics with v = V: the Bellman error is O(dt)
        let bench = bench_model();
        let b2 = bench.clone();
        let model = ModelSpec::with_constant_diffusion(
            1,
            1,
            1.0,
            Arc::new(move |x: &[f64]| {
                let v = b2.value(x[0]);
                let dv = b2.value_derivative(x[0]);
                v - b2.drift(x[0]) * dv
            }),
            {
                let b3 = bench.clone();
                Arc::new(move |x: &[f64], o: &mut [f64]| o[0] = b3.drift(x[0]))
            },
            vec![0.0],
        )
        .unwrap();
        let phi = fourier_features();
        let alpha = 0.5;
        for dt in [1e-2, 1e-3] {
            let x = p(0.13);
            let x_next = crate::observe::euler_step(&model, &x, dt, &[0.0]).unwrap();
            let o = Observation {
                dt,
                x: x.clone(),
                x_next,
                reward: model.reward(x.coords()),
            };
            let mut s = LearnerState::new(Theta::from(vec![0.0, 1.0, 0.0]));
            td0_step(&mut s, &o, &phi, &model, &cfg(Algorithm::Td0, alpha)).unwrap();
            let moved = s.theta.distance_squared(&Theta::from(vec![0.0, 1.0, 0.0])).sqrt();
            assert!(moved < 50.0 * alpha * dt, "dt={dt}: moved {moved}");
        }
    }

    #[test]
    fn semi_gradient_and_residual_gradient_directions_differ() {
        let m = bench_model();
        let phi = fourier_features();
        let o = obs(0.1, 0.3, 0.1, 0.0);
        let theta0 = Theta::from(vec![0.0, 1.0, 0.0]);
        let config = cfg(Algorithm::Td0, 1e-3);
        let td = crate::td::stochastic_td(&o, &theta0, &phi, m.spec()).unwrap();

        let mut a = LearnerState::new(theta0.clone());
        td0_step(&mut a, &o, &phi, m.spec(), &config).unwrap();
        let mut b = LearnerState::new(theta0.clone());
        rg_step(&mut b, &o, &phi, m.spec(), &LearnerConfig { algorithm: Algorithm::Rg, ..config.clone() }).unwrap();

        for i in 0..3 {
            let semi = theta0.as_slice()[i] - 1e-3 * td.delta * td.phi_x[i];
            let full = theta0.as_slice()[i] - 1e-3 * td.delta * td.grad_theta[i];
            assert!((a.theta.as_slice()[i] - semi).abs() < 1e-15);
            assert!((b.theta.as_slice()[i] - full).abs() < 1e-15);
        }
        assert!(a.theta.distance_squared(&b.theta) > 1e-8);
    }

    fn options(k_max: u64, dt: Schedule) -> TrainOptions {
        TrainOptions {
            dt,
            mode: ObservationMode::Simulator,
            sampler: StationarySampler::BenchmarkInverseCdf,
            k_max,
            log_grid: LogGrid::Geometric,
            trailing_from: None,
        }
    }

    #[test]
    fn train_with_zero_iterations_returns_initial_state() {
        let m = bench_model();
        let phi = fourier_features();
        let metric = ErrorMetric::ParamMse {
            reference: Theta::from(vec![0.0, 1.0, 0.0]),
        };
        let out = train(m.spec(), &phi, &LearnerConfig::default(), &options(0, Schedule::Constant { c: 0.1 }), &metric, &RngStream::new(0)).unwrap();
        assert_eq!(out.state.k, 0);
        assert_eq!(out.state.theta, Theta::zeros(3));
        assert!(out.state.error_log.is_empty());
    }

    #[test]
    fn averaging_matches_recomputed_history() {
        let m = bench_model();
        let phi = fourier_features();
        let config = LearnerConfig {
            averaging: true,
            lr: Schedule::Constant { c: 0.01 },
            ..LearnerConfig::default()
        };
        let mut stream = ObservationStream::new(
            m.spec(),
            StationarySampler::BenchmarkInverseCdf,
            Schedule::Power { c: 1.0, a: 0.5 },
            ObservationMode::Simulator,
            &RngStream::new(4),
        )
        .unwrap();
        let mut s = LearnerState::new(Theta::zeros(3));
        let mut history = vec![s.theta.clone()];
        for _ in 0..2000 {
            let o = stream.next().unwrap();
            td0_step(&mut s, &o, &phi, m.spec(), &config).unwrap();
            let mean: Vec<f64> = (0..3)
                .map(|i| history.iter().map(|t| t.as_slice()[i]).sum::<f64>() / history.len() as f64)
                .collect();
            for (a, b) in s.theta_bar.as_slice().iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
            history.push(s.theta.clone());
        }
    }

    #[test]
    fn projection_holds_along_training() {
        let m = bench_model();
        let phi = fourier_features();
        let config = LearnerConfig {
            mu: 0.5,
            ball_radius: Some(0.3),
            lr: Schedule::Constant { c: 0.5 },
            variant: TdVariant::Standard,
            ..LearnerConfig::default()
        };
        let mut stream = ObservationStream::new(
            m.spec(),
            StationarySampler::BenchmarkInverseCdf,
            Schedule::Constant { c: 0.01 },
            ObservationMode::Simulator,
            &RngStream::new(5),
        )
        .unwrap();
        let mut s = LearnerState::new(Theta::zeros(3));
        for _ in 0..5000 {
            td0_step(&mut s, &stream.next().unwrap(), &phi, m.spec(), &config).unwrap();
            assert!(s.theta.norm() <= 0.3 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn divergence_is_reported_with_iteration() {
        let m = bench_model();
        let phi = fourier_features();
        let config = LearnerConfig {
            lr: Schedule::Constant { c: 50.0 },
            variant: TdVariant::Standard,
            ..LearnerConfig::default()
        };
        let metric = ErrorMetric::ParamMse {
            reference: Theta::zeros(3),
        };
        let err = train(m.spec(), &phi, &config, &options(100_000, Schedule::Constant { c: 1e-3 }), &metric, &RngStream::new(1)).unwrap_err();
        match err {
            Error::Divergence { k, .. } => assert!((1..100_000).contains(&k)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn train_logs_on_the_grid_and_is_deterministic() {
        let m = bench_model();
        let phi = fourier_features();
        let metric = ErrorMetric::ParamMse {
            reference: Theta::from(vec![0.0, 1.0, 0.0]),
        };
        let opts = options(1000, Schedule::Power { c: 2.0, a: 0.5 });
        let a = train(m.spec(), &phi, &LearnerConfig::default(), &opts, &metric, &RngStream::new(3)).unwrap();
        let b = train(m.spec(), &phi, &LearnerConfig::default(), &opts, &metric, &RngStream::new(3)).unwrap();
        let ks: Vec<u64> = a.state.error_log.iter().map(|e| e.0).collect();
        assert_eq!(ks, LogGrid::Geometric.points(1000));
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn rg_extensions_run_and_differ() {
        let m = bench_model();
        let phi = fourier_features();
        let metric = ErrorMetric::ParamMse {
            reference: Theta::zeros(3),
        };
        let opts = options(200, Schedule::Power { c: 1.0, a: 0.5 });
        let mut finals = Vec::new();
        for ext in [
            RgExtension::None,
            RgExtension::Multistep(CountSchedule::fixed(3)),
            RgExtension::Minibatch(CountSchedule::fixed(3)),
            RgExtension::SigmaSchedule(Schedule::Power { c: 1.0, a: 0.125 }),
            RgExtension::Rademacher,
        ] {
            let config = LearnerConfig {
                algorithm: Algorithm::Rg,
                mu: 1.0,
                ball_radius: Some(3.0),
                lr: Schedule::Power { c: 2.0, a: 1.0 },
                rg_extension: ext,
                ..LearnerConfig::default()
            };
            let out = train(m.spec(), &phi, &config, &opts, &metric, &RngStream::new(8)).unwrap();
            assert!(out.state.theta.norm() <= 3.0 + 1e-12);
            finals.push(out.state.theta);
        }
        for i in 1..finals.len() {
            assert_ne!(finals[0], finals[i]);
        }
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        let bad = [
            LearnerConfig { mu: -1.0, ..LearnerConfig::default() },
            LearnerConfig { ball_radius: Some(0.0), ..LearnerConfig::default() },
            LearnerConfig { rg_extension: RgExtension::Rademacher, ..LearnerConfig::default() },
            LearnerConfig {
                algorithm: Algorithm::Rg,
                variant: TdVariant::Standard,
                rg_extension: RgExtension::Rademacher,
                ..LearnerConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn radius_floor() {
        let c = LearnerConfig {
            mu: 2.0,
            ball_radius: Some(1.0),
            ..LearnerConfig::default()
        };
        assert!(c.check_radius(1.0, 5.0).is_ok());
        assert!(c.check_radius(10.0, 5.0).is_err());
    }

    #[test]
    fn balanced_regularisation_vanishes() {
        assert!((balanced_mu(TdVariant::Standard, 1_000_000) - 0.1).abs() < 1e-12);
        assert!((balanced_mu(TdVariant::Stochastic, 10_000) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn log_grids() {
        assert_eq!(LogGrid::Geometric.points(10), vec![1, 2, 4, 8, 10]);
        assert_eq!(LogGrid::Geometric.points(8), vec![1, 2, 4, 8]);
        assert_eq!(LogGrid::PerDecade(1).points(1000), vec![1, 10, 100, 1000]);
        assert_eq!(LogGrid::Linear(3).points(10), vec![3, 6, 9, 10]);
        assert!(LogGrid::Geometric.points(0).is_empty());
        for g in [LogGrid::Geometric, LogGrid::PerDecade(8), LogGrid::Linear(7)] {
            assert_eq!(g.to_string().parse::<LogGrid>().unwrap(), g);
        }
        assert!("per_decade(0)".parse::<LogGrid>().is_err());
    }

    #[test]
    fn keyword_parsing() {
        assert_eq!("td0".parse::<Algorithm>().unwrap(), Algorithm::Td0);
        assert_eq!("stochastic".parse::<TdVariant>().unwrap(), TdVariant::Stochastic);
        assert!("sarsa".parse::<Algorithm>().is_err());
    }

    #[test]
    fn ell_metric_is_quadratic() {
        let matrix = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = ErrorMetric::EllLoss {
            reference: Theta::from(vec![1.0, -1.0]),
            matrix,
        };
        assert_eq!(m.evaluate(&[1.0, -1.0]), 0.0);
        let one = m.evaluate(&[1.3, -0.8]);
        let two = m.evaluate(&[1.6, -0.6]);
        assert!((two - 4.0 * one).abs() < 1e-12);
    }
}
