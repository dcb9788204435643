//! Observation quadruples `(dt, X, X', R)`.
//!
//! Two regimes are supported. A *simulator* observation takes one
//! Euler–Maruyama step from `X` and reports `R = r(X)`. A *real-world*
//! observation stands in for an exact SDE path: it integrates the dynamics
//! with `n_sub` Euler sub-steps and reports the time-averaged reward
//! (left-endpoint rule). States `X` are drawn i.i.d. from the invariant law.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::model::{benchmark_inverse_cdf, ModelSpec};
use crate::rng::{open_uniform, purpose, standard_normal, RngStream, StreamRng};
use crate::torus::{wrap_scalar, Coords, TorusPoint};

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub dt: f64,
    pub x: TorusPoint,
    pub x_next: TorusPoint,
    pub reward: f64,
}

/// Deterministic sequence indexed by `k = 0, 1, 2, ...`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    /// `c (k + 1)^(-a)`.
    Power { c: f64, a: f64 },
    Constant { c: f64 },
}

impl Schedule {
    pub fn power(c: f64, a: f64) -> Result<Self> {
        let s = Schedule::Power { c, a };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(c: f64) -> Result<Self> {
        let s = Schedule::Constant { c };
        s.validate()?;
        Ok(s)
    }

    /// Positive values; nonincreasing (`a >= 0`).
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Schedule::Power { c, a } => c > 0.0 && c.is_finite() && a >= 0.0 && a.is_finite(),
            Schedule::Constant { c } => c > 0.0 && c.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid schedule {self}")))
        }
    }

    #[inline]
    pub fn at(&self, k: u64) -> f64 {
        match *self {
            Schedule::Power { c, a } => c * ((k + 1) as f64).powf(-a),
            Schedule::Constant { c } => c,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Schedule::Power { .. } => "power",
            Schedule::Constant { .. } => "constant",
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Power { c, a } => write!(f, "power(c={c}, a={a})"),
            Schedule::Constant { c } => write!(f, "constant(c={c})"),
        }
    }
}

/// Growing integer sequence `n_k = max(1, ceil(c (k + 1)^a))`, used for
/// multi-step lengths and mini-batch sizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountSchedule {
    pub c: f64,
    pub a: f64,
}

impl CountSchedule {
    pub fn new(c: f64, a: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite() && a.is_finite()) {
            return Err(Error::Config(format!("invalid count schedule c={c}, a={a}")));
        }
        Ok(CountSchedule { c, a })
    }

    pub fn fixed(n: usize) -> Self {
        CountSchedule { c: n.max(1) as f64, a: 0.0 }
    }

    #[inline]
    pub fn at(&self, k: u64) -> usize {
        let v = (self.c * ((k + 1) as f64).powf(self.a)).ceil();
        if v.is_finite() && v >= 1.0 {
            v as usize
        } else {
            1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ObservationMode {
    #[default]
    Simulator,
    RealWorld { n_sub: usize },
}

impl ObservationMode {
    pub const DEFAULT_SUBSTEPS: usize = 32;
}

impl fmt::Display for ObservationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObservationMode::Simulator => write!(f, "simulator"),
            ObservationMode::RealWorld { .. } => write!(f, "realworld"),
        }
    }
}

/// `x + dt b(x) + sqrt(dt) scale sigma(x) z`, wrapped; `z` has length `d_W`.
pub(crate) fn euler_step_scaled(model: &ModelSpec, x: &[f64], dt: f64, z: &[f64], scale: f64) -> TorusPoint {
    let d = model.dim();
    let w = model.noise_dim();
    let mut drift = Coords::from_elem(0.0, d);
    model.drift_into(x, &mut drift);
    if d == 1 && w == 1 {
        let mut s = [0.0];
        model.diffusion_into(x, &mut s);
        let y = x[0] + dt * drift[0] + dt.sqrt() * scale * s[0] * z[0];
        return TorusPoint::from_finite([y]);
    }
    let sigma = model.diffusion(x);
    let sq = dt.sqrt() * scale;
    TorusPoint::from_finite((0..d).map(|i| {
        let noise: f64 = (0..w).map(|k| sigma[i * w + k] * z[k]).sum();
        x[i] + dt * drift[i] + sq * noise
    }))
}

/// One Euler–Maruyama step `S_dt(x, z) = x + dt b(x) + sqrt(dt) sigma(x) z`.
pub fn euler_step(model: &ModelSpec, x: &TorusPoint, dt: f64, z: &[f64]) -> Result<TorusPoint> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain(format!("time step must be positive, got {dt}")));
    }
    check_dim(model.dim(), x.dim())?;
    check_dim(model.noise_dim(), z.len())?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("noise must be finite"));
    }
    Ok(euler_step_scaled(model, x.coords(), dt, z, 1.0))
}

#[inline]
pub(crate) fn gaussian_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Coords {
    (0..n).map(|_| standard_normal(rng)).collect()
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("time step must be positive, got {dt}")))
    }
}

/// `X' = S_dt(X, xi)` with Gaussian `xi`, `R = r(X)`.
pub fn simulator_observation<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: &TorusPoint,
    dt: f64,
    rng: &mut R,
) -> Result<Observation> {
    check_dt(dt)?;
    check_dim(model.dim(), x.dim())?;
    Ok(simulator_unchecked(model, x, dt, 1.0, rng))
}

#[inline]
pub(crate) fn simulator_unchecked<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: &TorusPoint,
    dt: f64,
    scale: f64,
    rng: &mut R,
) -> Observation {
    let z = gaussian_noise(rng, model.noise_dim());
    let x_next = euler_step_scaled(model, x.coords(), dt, &z, scale);
    Observation {
        dt,
        reward: model.reward(x.coords()),
        x: x.clone(),
        x_next,
    }
}

/// `n_sub` Euler sub-steps of size `dt / n_sub`; `R` is the left-endpoint
/// average of `r` along the sub-trajectory.
pub fn realworld_observation<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: &TorusPoint,
    dt: f64,
    n_sub: usize,
    rng: &mut R,
) -> Result<Observation> {
    check_dt(dt)?;
    check_dim(model.dim(), x.dim())?;
    if n_sub == 0 {
        return Err(Error::domain("n_sub must be at least 1"));
    }
    Ok(realworld_unchecked(model, x, dt, n_sub, 1.0, rng))
}

pub(crate) fn realworld_unchecked<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: &TorusPoint,
    dt: f64,
    n_sub: usize,
    scale: f64,
    rng: &mut R,
) -> Observation {
    let h = dt / n_sub as f64;
    let mut cur = x.clone();
    let mut sum = 0.0;
    for _ in 0..n_sub {
        sum += model.reward(cur.coords());
        let z = gaussian_noise(rng, model.noise_dim());
        cur = euler_step_scaled(model, cur.coords(), h, &z, scale);
    }
    Observation {
        dt,
        x: x.clone(),
        x_next: cur,
        reward: sum / n_sub as f64,
    }
}

/// Observation in the given regime.
pub fn observe<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: &TorusPoint,
    dt: f64,
    mode: ObservationMode,
    rng: &mut R,
) -> Result<Observation> {
    match mode {
        ObservationMode::Simulator => simulator_observation(model, x, dt, rng),
        ObservationMode::RealWorld { n_sub } => realworld_observation(model, x, dt, n_sub, rng),
    }
}

pub(crate) fn observe_unchecked<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: &TorusPoint,
    dt: f64,
    mode: ObservationMode,
    scale: f64,
    rng: &mut R,
) -> Observation {
    match mode {
        ObservationMode::Simulator => simulator_unchecked(model, x, dt, scale, rng),
        ObservationMode::RealWorld { n_sub } => realworld_unchecked(model, x, dt, n_sub, scale, rng),
    }
}

/// How i.i.d. states are drawn from the invariant law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StationarySampler {
    /// Exact inverse-CDF sampling of the benchmark invariant density.
    BenchmarkInverseCdf,
    /// Generic fallback: a single long Euler chain started at the origin,
    /// burnt in for `burn_in` steps of size `dt`, then advanced `thin` steps
    /// between returned states.
    EulerChain { burn_in: u64, dt: f64, thin: u64 },
}

impl StationarySampler {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StationarySampler::BenchmarkInverseCdf => Ok(()),
            StationarySampler::EulerChain { dt, thin, .. } => {
                if dt > 0.0 && dt.is_finite() && thin >= 1 {
                    Ok(())
                } else {
                    Err(Error::Config(format!("invalid chain sampler dt={dt}, thin={thin}")))
                }
            }
        }
    }

    pub fn start<'a>(&self, model: &'a ModelSpec) -> Result<StateSampler<'a>> {
        self.validate()?;
        if matches!(self, StationarySampler::BenchmarkInverseCdf) && model.dim() != 1 {
            return Err(Error::domain("inverse-cdf sampling is only available in dimension 1"));
        }
        Ok(StateSampler {
            kind: *self,
            model,
            chain: None,
        })
    }
}

/// Stateful sampler bound to one model; chain state lives here.
#[derive(Debug)]
pub struct StateSampler<'a> {
    kind: StationarySampler,
    model: &'a ModelSpec,
    chain: Option<TorusPoint>,
}

impl StateSampler<'_> {
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> TorusPoint {
        match self.kind {
            StationarySampler::BenchmarkInverseCdf => {
                let z = open_uniform(rng);
                let x = benchmark_inverse_cdf(z).unwrap_or(0.0);
                TorusPoint::from_finite([wrap_scalar(x)])
            }
            StationarySampler::EulerChain { burn_in, dt, thin } => {
                let (mut cur, steps) = match self.chain.take() {
                    Some(p) => (p, thin),
                    None => (TorusPoint::from_finite(vec![0.0; self.model.dim()]), burn_in.max(1)),
                };
                for _ in 0..steps {
                    let z = gaussian_noise(rng, self.model.noise_dim());
                    cur = euler_step_scaled(self.model, cur.coords(), dt, &z, 1.0);
                }
                self.chain = Some(cur.clone());
                cur
            }
        }
    }
}

/// Draw one state from the sampler.
pub fn sample_stationary<R: Rng + ?Sized>(sampler: &mut StateSampler<'_>, rng: &mut R) -> TorusPoint {
    sampler.sample(rng)
}

/// Iterator over independent observations with `X_k` from the stationary
/// sampler and `dt_k` from the schedule.
///
/// States and transition noise use disjoint child streams, so two streams
/// built from the same key but different modes see the same states.
pub struct ObservationStream<'a> {
    model: &'a ModelSpec,
    sampler: StateSampler<'a>,
    schedule: Schedule,
    mode: ObservationMode,
    states: StreamRng,
    noise: StreamRng,
    k: u64,
}

impl<'a> ObservationStream<'a> {
    pub fn new(
        model: &'a ModelSpec,
        sampler: StationarySampler,
        schedule: Schedule,
        mode: ObservationMode,
        stream: &RngStream,
    ) -> Result<Self> {
        schedule.validate()?;
        if let ObservationMode::RealWorld { n_sub: 0 } = mode {
            return Err(Error::Config("n_sub must be at least 1".into()));
        }
        Ok(ObservationStream {
            model,
            sampler: sampler.start(model)?,
            schedule,
            mode,
            states: stream.child(purpose::STATES).rng(),
            noise: stream.child(purpose::NOISE).rng(),
            k: 0,
        })
    }

    /// Index of the next observation.
    pub fn position(&self) -> u64 {
        self.k
    }

    pub fn next_state(&mut self) -> TorusPoint {
        self.sampler.sample(&mut self.states)
    }

    /// Consumes one index like `next` but returns the state and time step
    /// without simulating the transition.
    pub fn next_input(&mut self) -> (TorusPoint, f64) {
        let dt = self.schedule.at(self.k);
        let x = self.sampler.sample(&mut self.states);
        self.k += 1;
        (x, dt)
    }

    pub fn noise_rng(&mut self) -> &mut StreamRng {
        &mut self.noise
    }

    pub fn model(&self) -> &'a ModelSpec {
        self.model
    }

    pub fn mode(&self) -> ObservationMode {
        self.mode
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }
}

impl Iterator for ObservationStream<'_> {
    type Item = Observation;

    fn next(&mut self) -> Option<Observation> {
        let dt = self.schedule.at(self.k);
        let x = self.sampler.sample(&mut self.states);
        self.k += 1;
        Some(observe_unchecked(self.model, &x, dt, self.mode, 1.0, &mut self.noise))
    }
}

/// Convenience constructor mirroring the free-function style of the module.
pub fn observation_stream<'a>(
    model: &'a ModelSpec,
    sampler: StationarySampler,
    schedule: Schedule,
    mode: ObservationMode,
    stream: &RngStream,
) -> Result<ObservationStream<'a>> {
    ObservationStream::new(model, sampler, schedule, mode, stream)
}

impl FromStr for ObservationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "simulator" => Ok(ObservationMode::Simulator),
            "realworld" | "real_world" | "real-world" => Ok(ObservationMode::RealWorld {
                n_sub: ObservationMode::DEFAULT_SUBSTEPS,
            }),
            other => Err(Error::Config(format!("unknown observation mode `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BenchmarkModel;
    use crate::stats::Welford;
    use crate::torus::torus_displacement;
    use std::sync::Arc;

    fn bench_model() -> BenchmarkModel {
        BenchmarkModel::new(1.0, 0.1).unwrap()
    }

    fn flat_model(reward: f64, sigma: f64) -> ModelSpec {
        ModelSpec::with_constant_diffusion(
            1,
            1,
            1.0,
            Arc::new(move |_: &[f64]| reward),
            Arc::new(|_: &[f64], o: &mut [f64]| o[0] = 0.0),
            vec![sigma],
        )
        .unwrap()
    }

    fn p(x: f64) -> TorusPoint {
        TorusPoint::scalar(x).unwrap()
    }

    #[test]
    fn euler_step_examples() {
        let flat = flat_model(0.0, 1.0);
        let y = euler_step(&flat, &p(0.3), 0.1, &[0.0]).unwrap();
        assert_eq!(y, p(0.3));

        let m = bench_model();
        let y = euler_step(m.spec(), &p(0.0), 0.01, &[1.0]).unwrap();
        assert!((y.coords()[0] - (0.01f64 * 0.1).sqrt()).abs() < 1e-15);
        assert!((y.coords()[0] - 0.031623).abs() < 1e-6);

        let x = p(0.17);
        let y = euler_step(m.spec(), &x, 0.01, &[0.0]).unwrap();
        let d = torus_displacement(&x, &y).unwrap()[0];
        assert!((d - 0.01 * m.drift(0.17)).abs() < 1e-15);
    }

    #[test]
    fn euler_step_rejects_bad_inputs() {
        let m = bench_model();
        assert!(euler_step(m.spec(), &p(0.0), 0.0, &[1.0]).is_err());
        assert!(euler_step(m.spec(), &p(0.0), 0.1, &[1.0, 2.0]).is_err());
        assert!(euler_step(m.spec(), &p(0.0), 0.1, &[f64::NAN]).is_err());
    }

    #[test]
    fn simulator_reward_is_reward_at_x() {
        let mut rng = RngStream::new(1).rng();
        let o = simulator_observation(&flat_model(0.0, 1.0), &p(0.2), 0.1, &mut rng).unwrap();
        assert_eq!(o.reward, 0.0);
        let m = bench_model();
        let o = simulator_observation(m.spec(), &p(0.0), 0.1, &mut rng).unwrap();
        assert_eq!(o.reward, 0.0);
        assert!(simulator_observation(m.spec(), &p(0.0), -1.0, &mut rng).is_err());
    }

    #[test]
    fn simulator_increment_moments() {
        let m = bench_model();
        let (x, dt, n) = (0.2, 1e-2, 100_000);
        let mut rng = RngStream::new(8).rng();
        let mut w = Welford::new();
        for _ in 0..n {
            let o = simulator_observation(m.spec(), &p(x), dt, &mut rng).unwrap();
            w.add(torus_displacement(&o.x, &o.x_next).unwrap()[0]);
        }
        let tol = 3.0 * (0.1 * dt / n as f64).sqrt();
        assert!((w.mean() - dt * m.drift(x)).abs() < tol);
        // Var(increment) = sigma^2 dt, checked at 3 standard errors
        let se = 0.1 * dt * (2.0 / n as f64).sqrt();
        assert!((w.variance() - 0.1 * dt).abs() < 3.0 * se);
    }

    #[test]
    fn realworld_with_one_substep_matches_simulator() {
        let m = bench_model();
        let mut a = RngStream::new(3).rng();
        let mut b = RngStream::new(3).rng();
        for i in 0..100 {
            let x = p(-0.5 + i as f64 / 100.0);
            let s = simulator_observation(m.spec(), &x, 0.05, &mut a).unwrap();
            let r = realworld_observation(m.spec(), &x, 0.05, 1, &mut b).unwrap();
            assert_eq!(s, r);
        }
    }

    #[test]
    fn realworld_constant_reward() {
        let flat = flat_model(2.5, 0.7);
        let mut rng = RngStream::new(3).rng();
        for n_sub in [1, 7, 32] {
            let o = realworld_observation(&flat, &p(0.1), 0.01, n_sub, &mut rng).unwrap();
            assert!((o.reward - 2.5).abs() < 1e-12);
        }
        assert!(realworld_observation(&flat, &p(0.1), 0.01, 0, &mut rng).is_err());
    }

    #[test]
    fn schedules() {
        let s = Schedule::power(1.0, 1.0 / 3.0).unwrap();
        assert_eq!(s.at(0), 1.0);
        assert!((s.at(1) - 2f64.powf(-1.0 / 3.0)).abs() < 1e-15);
        assert!((s.at(2) - 3f64.powf(-1.0 / 3.0)).abs() < 1e-15);
        let c = Schedule::constant(0.01).unwrap();
        assert!((0..100).all(|k| c.at(k) == 0.01));
        assert!(Schedule::power(-1.0, 0.5).is_err());
        assert!(Schedule::power(1.0, -0.5).is_err());
        assert!(Schedule::constant(0.0).is_err());
        let mut last = f64::INFINITY;
        for k in 0..1000 {
            let v = s.at(k);
            assert!(v > 0.0 && v <= last);
            last = v;
        }
    }

    #[test]
    fn count_schedule() {
        let n = CountSchedule::new(1.0, 0.5).unwrap();
        assert_eq!(n.at(0), 1);
        assert_eq!(n.at(3), 2);
        assert_eq!(n.at(99), 10);
        assert_eq!(CountSchedule::fixed(4).at(1000), 4);
    }

    #[test]
    fn stream_uses_schedule() {
        let m = bench_model();
        let s = observation_stream(
            m.spec(),
            StationarySampler::BenchmarkInverseCdf,
            Schedule::power(1.0, 1.0 / 3.0).unwrap(),
            ObservationMode::Simulator,
            &RngStream::new(0),
        )
        .unwrap();
        let dts: Vec<f64> = s.take(3).map(|o| o.dt).collect();
        assert_eq!(dts[0], 1.0);
        assert!((dts[1] - 2f64.powf(-1.0 / 3.0)).abs() < 1e-15);
        assert!((dts[2] - 3f64.powf(-1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn stream_states_do_not_depend_on_mode() {
        let m = bench_model();
        let make = |mode| {
            observation_stream(
                m.spec(),
                StationarySampler::BenchmarkInverseCdf,
                Schedule::constant(0.01).unwrap(),
                mode,
                &RngStream::new(5),
            )
            .unwrap()
        };
        let a: Vec<_> = make(ObservationMode::Simulator).take(50).map(|o| o.x).collect();
        let b: Vec<_> = make(ObservationMode::RealWorld { n_sub: 4 }).take(50).map(|o| o.x).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn stream_states_are_uncorrelated() {
        let m = bench_model();
        let s = observation_stream(
            m.spec(),
            StationarySampler::BenchmarkInverseCdf,
            Schedule::constant(0.01).unwrap(),
            ObservationMode::Simulator,
            &RngStream::new(12),
        )
        .unwrap();
        let xs: Vec<f64> = s.take(100_000).map(|o| o.x.coords()[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        let lag1 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>();
        assert!((lag1 / var).abs() < 0.01);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("simulator".parse::<ObservationMode>().unwrap(), ObservationMode::Simulator);
        assert!(matches!(
            "realworld".parse::<ObservationMode>().unwrap(),
            ObservationMode::RealWorld { n_sub: 32 }
        ));
        assert!("lab".parse::<ObservationMode>().is_err());
    }

    #[test]
    fn inverse_cdf_sampler_requires_dimension_one() {
        let two_d = ModelSpec::with_constant_diffusion(
            2,
            2,
            1.0,
            Arc::new(|_: &[f64]| 0.0),
            Arc::new(|_: &[f64], o: &mut [f64]| o.fill(0.0)),
            vec![1.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        assert!(StationarySampler::BenchmarkInverseCdf.start(&two_d).is_err());
        assert!(StationarySampler::EulerChain { burn_in: 10, dt: 0.0, thin: 1 }
            .start(&two_d)
            .is_err());
    }

    fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    fn draw(sampler: StationarySampler, n: usize, seed: u64) -> Vec<f64> {
        let model = BenchmarkModel::new(1.0, 0.1).unwrap();
        let mut s = sampler.start(model.spec()).unwrap();
        let mut rng = RngStream::new(seed).rng();
        (0..n).map(|_| s.sample(&mut rng).coords()[0]).collect()
    }

    #[test]
    fn inverse_cdf_sampler_passes_kolmogorov_smirnov() {
        let model = BenchmarkModel::new(1.0, 0.1).unwrap();
        let n = 100_000;
        let d = ks_statistic(draw(StationarySampler::BenchmarkInverseCdf, n, 3), |x| model.cdf(x));
        // 1% critical value.
        assert!(d < 1.63 / (n as f64).sqrt(), "D = {d}");
    }

    #[test]
    fn ks_detects_the_wrong_law() {
        let n = 100_000;
        let d = ks_statistic(draw(StationarySampler::BenchmarkInverseCdf, n, 3), |x| x + 0.5);
        assert!(d > 1.63 / (n as f64).sqrt(), "D = {d}");
    }

    #[test]
    fn euler_chain_approaches_the_invariant_law() {
        let model = BenchmarkModel::new(1.0, 0.1).unwrap();
        let chain = StationarySampler::EulerChain {
            burn_in: 10_000,
            dt: 1e-3,
            thin: 1_000,
        };
        let d = ks_statistic(draw(chain, 20_000, 5), |x| model.cdf(x));
        // Euler bias plus residual correlation between thinned states.
        assert!(d < 0.03, "D = {d}");
    }

    #[test]
    fn samples_lie_in_the_fundamental_cell() {
        for x in draw(StationarySampler::BenchmarkInverseCdf, 10_000, 9) {
            assert!((-0.5..0.5).contains(&x), "{x}");
        }
    }
}
