//! Monte-Carlo estimates of the quantities the learners converge to.
//!
//! Every expectation is over i.i.d. draws from the invariant law, split into
//! [`BATCHES`] batches with their own child streams; standard errors are
//! batch-means errors and reductions run in batch order.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::features::{grad_unchecked, hess_unchecked, FeatureMap, LinearValue, Theta};
use crate::model::{generator_apply, ModelSpec};
use crate::observe::{observe_unchecked, ObservationMode, StationarySampler};
use crate::rng::{purpose, RngStream};
use crate::stats::{MomentAccumulator, Welford};
use crate::td::{stochastic_unchecked, td_kernel};
use crate::torus::TorusPoint;

pub const BATCHES: usize = 100;

/// Minimum sample count for the limit estimators.
pub const MIN_SAMPLES: usize = 1_000;

/// Per-point derivatives of the features and their generator image.
struct Jet {
    phi: Vec<f64>,
    jac: Vec<f64>,
    hess: Vec<f64>,
    /// `L phi_i(x)`.
    lphi: Vec<f64>,
    /// `sigma sigma^T`, row-major `d x d`.
    cov: Vec<f64>,
    reward: f64,
}

impl Jet {
    fn new(n: usize, d: usize) -> Self {
        Jet {
            phi: vec![0.0; n],
            jac: vec![0.0; n * d],
            hess: vec![0.0; n * d * d],
            lphi: vec![0.0; n],
            cov: vec![0.0; d * d],
            reward: 0.0,
        }
    }

    fn fill(&mut self, model: &ModelSpec, phi: &dyn FeatureMap, x: &[f64]) {
        let n = phi.num_features();
        let d = phi.state_dim();
        phi.eval_into(x, &mut self.phi);
        phi.jacobian_into(x, &mut self.jac);
        phi.hessian_into(x, &mut self.hess);
        self.cov.copy_from_slice(&model.covariance(x));
        let b = model.drift(x);
        self.reward = model.reward(x);
        for i in 0..n {
            let h = &self.hess[i * d * d..(i + 1) * d * d];
            let trace: f64 = self.cov.iter().zip(h).map(|(c, hv)| c * hv).sum();
            let transport: f64 = (0..d).map(|j| b[j] * self.jac[i * d + j]).sum();
            self.lphi[i] = model.rho() * self.phi[i] - 0.5 * trace - transport;
        }
    }

    /// `(sigma sigma^T D^2 phi_i)` as a row-major `d x d` matrix.
    fn cov_hess(&self, i: usize, d: usize) -> Vec<f64> {
        let h = &self.hess[i * d * d..(i + 1) * d * d];
        let mut out = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                out[r * d + c] = (0..d).map(|k| self.cov[r * d + k] * h[k * d + c]).sum();
            }
        }
        out
    }
}

/// Batch means of a vector-valued integrand.
struct BatchEstimate {
    batches: Vec<Vec<f64>>,
    counts: Vec<usize>,
}

impl BatchEstimate {
    fn mean(&self) -> Vec<f64> {
        let total: usize = self.counts.iter().sum();
        let width = self.batches[0].len();
        let mut out = vec![0.0; width];
        for (b, &c) in self.batches.iter().zip(&self.counts) {
            for (o, v) in out.iter_mut().zip(b) {
                *o += v * c as f64 / total as f64;
            }
        }
        out
    }

    fn std_error(&self) -> Vec<f64> {
        column_std_error(&self.batches)
    }
}

fn column_std_error(rows: &[Vec<f64>]) -> Vec<f64> {
    let width = rows[0].len();
    (0..width)
        .map(|j| {
            let mut w = Welford::new();
            rows.iter().for_each(|r| w.add(r[j]));
            w.std_error()
        })
        .collect()
}

fn batch_estimate<F>(
    model: &ModelSpec,
    sampler: StationarySampler,
    phi: &dyn FeatureMap,
    n: usize,
    stream: &RngStream,
    width: usize,
    integrand: F,
) -> Result<BatchEstimate>
where
    F: Fn(&Jet, &[f64], &mut [f64]) + Sync,
{
    if n < MIN_SAMPLES {
        return Err(Error::domain(format!("need at least {MIN_SAMPLES} samples, got {n}")));
    }
    check_dim(model.dim(), phi.state_dim())?;
    sampler.start(model)?;
    let (nf, d) = (phi.num_features(), phi.state_dim());
    let results: Vec<Result<(Vec<f64>, usize)>> = (0..BATCHES)
        .into_par_iter()
        .map(|batch| {
            let count = n / BATCHES + usize::from(batch < n % BATCHES);
            let mut states = sampler.start(model)?;
            let mut rng = stream.child(purpose::ORACLE).child(batch as u64).rng();
            let mut jet = Jet::new(nf, d);
            let mut acc = vec![0.0; width];
            for _ in 0..count {
                let x = states.sample(&mut rng);
                jet.fill(model, phi, x.coords());
                integrand(&jet, x.coords(), &mut acc);
            }
            acc.iter_mut().for_each(|v| *v /= count as f64);
            Ok((acc, count))
        })
        .collect();
    let mut batches = Vec::with_capacity(BATCHES);
    let mut counts = Vec::with_capacity(BATCHES);
    for r in results {
        let (b, c) = r?;
        batches.push(b);
        counts.push(c);
    }
    Ok(BatchEstimate { batches, counts })
}

fn square(values: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, values)
}

/// Dense solve with a singularity check and residual verification.
pub fn solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(m.nrows(), rhs.len())?;
    check_dim(m.nrows(), m.ncols())?;
    let sv = m.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-12 * smax) {
        return Err(Error::Singular {
            smallest_singular_value: smin,
        });
    }
    let lu = m.clone().lu();
    let mut x = lu.solve(rhs).ok_or(Error::Singular {
        smallest_singular_value: smin,
    })?;
    let tol = 1e-10 * rhs.norm();
    let mut residual = rhs - m * &x;
    if residual.norm() > tol {
        if let Some(dx) = lu.solve(&residual) {
            x += dx;
        }
        residual = rhs - m * &x;
        if residual.norm() > tol {
            return Err(Error::Singular {
                smallest_singular_value: smin,
            });
        }
    }
    Ok(x)
}

fn regularised(m: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    m + DMatrix::identity(m.nrows(), m.ncols()) * mu
}

fn to_theta(v: &DVector<f64>) -> Theta {
    Theta::from(v.iter().copied().collect::<Vec<_>>())
}

#[derive(Clone, Debug)]
pub struct LimitErrors {
    pub h: DMatrix<f64>,
    pub b_vec: DVector<f64>,
    pub theta_star: DVector<f64>,
}

/// `H = E[phi (L phi)^T]`, `b = E[r phi]` and the solutions built on them.
#[derive(Clone, Debug)]
pub struct LimitSolution {
    pub h: DMatrix<f64>,
    pub b_vec: DVector<f64>,
    pub s: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub theta_star: Theta,
    pub n_samples: usize,
    pub se: LimitErrors,
    batch_h: Vec<DMatrix<f64>>,
    batch_b: Vec<DVector<f64>>,
}

impl LimitSolution {
    /// Solution of `(mu I + H) theta = b`.
    pub fn theta_star_mu(&self, mu: f64) -> Result<Theta> {
        if !(mu >= 0.0) {
            return Err(Error::domain(format!("mu must be >= 0, got {mu}")));
        }
        solve(&regularised(&self.h, mu), &self.b_vec).map(|v| to_theta(&v))
    }

    /// Batch-means standard error of each coordinate of `theta*_mu`.
    pub fn theta_star_mu_se(&self, mu: f64) -> Result<DVector<f64>> {
        let rows = self
            .batch_h
            .iter()
            .zip(&self.batch_b)
            .map(|(h, b)| solve(&regularised(h, mu), b).map(|v| v.iter().copied().collect()))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(DVector::from_vec(column_std_error(&rows)))
    }

    pub fn min_eigenvalue_s(&self) -> f64 {
        self.s.symmetric_eigenvalues().min()
    }
}

/// Monte-Carlo estimate of `H`, `b` and `theta*` from `n` stationary draws.
pub fn estimate_limits(
    model: &ModelSpec,
    sampler: StationarySampler,
    phi: &dyn FeatureMap,
    n: usize,
    stream: &RngStream,
) -> Result<LimitSolution> {
    let nf = phi.num_features();
    let est = batch_estimate(model, sampler, phi, n, stream, nf * nf + nf, |jet, _, acc| {
        for i in 0..nf {
            for j in 0..nf {
                acc[i * nf + j] += jet.phi[i] * jet.lphi[j];
            }
            acc[nf * nf + i] += jet.reward * jet.phi[i];
        }
    })?;
    let mean = est.mean();
    let se = est.std_error();
    let h = square(&mean[..nf * nf], nf);
    let b_vec = DVector::from_column_slice(&mean[nf * nf..]);
    let theta = solve(&h, &b_vec)?;

    let batch_h: Vec<DMatrix<f64>> = est.batches.iter().map(|b| square(&b[..nf * nf], nf)).collect();
    let batch_b: Vec<DVector<f64>> = est.batches.iter().map(|b| DVector::from_column_slice(&b[nf * nf..])).collect();
    let theta_rows = batch_h
        .iter()
        .zip(&batch_b)
        .map(|(h, b)| solve(h, b).map(|v| v.iter().copied().collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;

    let ht = h.transpose();
    Ok(LimitSolution {
        s: (&h + &ht) * 0.5,
        a: (&h - &ht) * 0.5,
        theta_star: to_theta(&theta),
        n_samples: n,
        se: LimitErrors {
            h: square(&se[..nf * nf], nf),
            b_vec: DVector::from_column_slice(&se[nf * nf..]),
            theta_star: DVector::from_vec(column_std_error(&theta_rows)),
        },
        h,
        b_vec,
        batch_h,
        batch_b,
    })
}

/// `S_l = rho E[phi phi^T] + E[D phi sigma sigma^T D phi^T] / 2` with its
/// batch-means standard error.
#[derive(Clone, Debug)]
pub struct EllMatrix {
    pub matrix: DMatrix<f64>,
    pub se: DMatrix<f64>,
}

impl EllMatrix {
    pub fn loss(&self, theta: &Theta, theta_ref: &Theta) -> Result<f64> {
        check_dim(self.matrix.nrows(), theta.len())?;
        check_dim(self.matrix.nrows(), theta_ref.len())?;
        let u = DVector::from_iterator(
            theta.len(),
            theta.as_slice().iter().zip(theta_ref.as_slice()).map(|(a, b)| a - b),
        );
        Ok(u.dot(&(&self.matrix * &u)))
    }
}

pub fn ell_matrix(
    model: &ModelSpec,
    sampler: StationarySampler,
    phi: &dyn FeatureMap,
    n: usize,
    stream: &RngStream,
) -> Result<EllMatrix> {
    let nf = phi.num_features();
    let d = phi.state_dim();
    let rho = model.rho();
    let est = batch_estimate(model, sampler, phi, n, stream, nf * nf, |jet, _, acc| {
        for i in 0..nf {
            for j in 0..nf {
                let mut q = 0.0;
                for a in 0..d {
                    for b in 0..d {
                        q += jet.jac[i * d + a] * jet.cov[a * d + b] * jet.jac[j * d + b];
                    }
                }
                acc[i * nf + j] += rho * jet.phi[i] * jet.phi[j] + 0.5 * q;
            }
        }
    })?;
    Ok(EllMatrix {
        matrix: square(&est.mean(), nf),
        se: square(&est.std_error(), nf),
    })
}

/// `E_m[rho (v - w)^2 + |sigma^T grad (v - w)|^2 / 2]` for `v = theta . phi`
/// and `w = theta_ref . phi`, through the quadratic form.
#[allow(clippy::too_many_arguments)]
pub fn ell_loss(
    theta: &Theta,
    theta_ref: &Theta,
    model: &ModelSpec,
    sampler: StationarySampler,
    phi: &dyn FeatureMap,
    n: usize,
    stream: &RngStream,
) -> Result<f64> {
    ell_matrix(model, sampler, phi, n, stream)?.loss(theta, theta_ref)
}

/// Direct Monte-Carlo average of the defining integrand; returns the
/// estimate and its standard error.
#[allow(clippy::too_many_arguments)]
pub fn ell_loss_direct(
    theta: &Theta,
    theta_ref: &Theta,
    model: &ModelSpec,
    sampler: StationarySampler,
    phi: &dyn FeatureMap,
    n: usize,
    stream: &RngStream,
) -> Result<(f64, f64)> {
    check_dim(phi.num_features(), theta.len())?;
    check_dim(phi.num_features(), theta_ref.len())?;
    let u: Vec<f64> = theta.as_slice().iter().zip(theta_ref.as_slice()).map(|(a, b)| a - b).collect();
    let d = phi.state_dim();
    let rho = model.rho();
    let est = batch_estimate(model, sampler, phi, n, stream, 1, |jet, x, acc| {
        let diff: f64 = u.iter().zip(&jet.phi).map(|(a, b)| a * b).sum();
        let grad = grad_unchecked(&u, phi, x);
        let sigma = model.diffusion(x);
        let dw = model.noise_dim();
        let sq: f64 = (0..dw)
            .map(|k| {
                let c: f64 = (0..d).map(|j| sigma[j * dw + k] * grad[j]).sum();
                c * c
            })
            .sum();
        acc[0] += rho * diff * diff + 0.5 * sq;
    })?;
    Ok((est.mean()[0], est.std_error()[0]))
}

/// Closed-form small-step limits of the conditional moments at one state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyticLimits {
    /// `L v - r`.
    pub bellman: f64,
    /// `|sigma^T grad v|^2`, the limit of `dt Var(delta | X)`.
    pub var_std_scaled: f64,
    /// `tr((sigma sigma^T D^2 v)^2) / 2`, the limit of `Var(delta~ | X)`.
    pub var_stoch: f64,
    /// `2 tr((sigma sigma^T D^2 v)^2)`, four times the actual limit.
    pub var_stoch_quoted: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentRow {
    pub dt: f64,
    pub mean_std: f64,
    pub mean_std_se: f64,
    pub var_std: f64,
    pub var_std_se: f64,
    pub mean_stoch: f64,
    pub mean_stoch_se: f64,
    pub var_stoch: f64,
    pub var_stoch_se: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentReport {
    pub x: TorusPoint,
    pub theta: Theta,
    pub rows: Vec<MomentRow>,
    pub analytic: AnalyticLimits,
}

impl MomentReport {
    pub fn dt_grid(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.dt).collect()
    }
}

pub fn analytic_limits(model: &ModelSpec, phi: &dyn FeatureMap, theta: &Theta, x: &TorusPoint) -> Result<AnalyticLimits> {
    check_dim(model.dim(), x.dim())?;
    let field = LinearValue::new(theta, phi)?;
    let bellman = generator_apply(model, &field, x.coords())? - model.reward(x.coords());
    let d = model.dim();
    let dw = model.noise_dim();
    let grad = grad_unchecked(theta.as_slice(), phi, x.coords());
    let sigma = model.diffusion(x.coords());
    let var_std_scaled = (0..dw)
        .map(|k| {
            let c: f64 = (0..d).map(|j| sigma[j * dw + k] * grad[j]).sum();
            c * c
        })
        .sum();
    let cov = DMatrix::from_row_slice(d, d, &model.covariance(x.coords()));
    let hess = DMatrix::from_row_slice(d, d, &hess_unchecked(theta.as_slice(), phi, x.coords()));
    let m = cov * hess;
    let tr_sq = (&m * &m).trace();
    Ok(AnalyticLimits {
        bellman,
        var_std_scaled,
        var_stoch: 0.5 * tr_sq,
        var_stoch_quoted: 2.0 * tr_sq,
    })
}

/// Conditional means and variances of both temporal differences at fixed
/// `x`, over `n` transitions per time step.
#[allow(clippy::too_many_arguments)]
pub fn conditional_moments(
    model: &ModelSpec,
    phi: &dyn FeatureMap,
    theta: &Theta,
    x: &TorusPoint,
    dt_grid: &[f64],
    n: usize,
    mode: ObservationMode,
    stream: &RngStream,
) -> Result<MomentReport> {
    if n < 10_000 {
        return Err(Error::domain(format!("need at least 10000 transitions, got {n}")));
    }
    check_dim(phi.num_features(), theta.len())?;
    check_dim(model.dim(), x.dim())?;
    check_dim(phi.state_dim(), x.dim())?;
    if let ObservationMode::RealWorld { n_sub: 0 } = mode {
        return Err(Error::Config("n_sub must be at least 1".into()));
    }
    let analytic = analytic_limits(model, phi, theta, x)?;
    let rows = dt_grid
        .par_iter()
        .enumerate()
        .map(|(i, &dt)| {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::domain(format!("time step must be positive, got {dt}")));
            }
            let mut rng = stream.child(purpose::NOISE).child(i as u64).rng();
            let mut std = MomentAccumulator::new();
            let mut stoch = MomentAccumulator::new();
            let b = model.drift(x.coords());
            for _ in 0..n {
                let obs = observe_unchecked(model, x, dt, mode, 1.0, &mut rng);
                let s = td_kernel(&obs, theta.as_slice(), phi, model.rho(), None);
                let t = td_kernel(&obs, theta.as_slice(), phi, model.rho(), Some(&b));
                std.add(s.delta);
                stoch.add(t.delta);
            }
            Ok(MomentRow {
                dt,
                mean_std: std.mean(),
                mean_std_se: std.mean_std_error(),
                var_std: std.variance(),
                var_std_se: std.variance_std_error(),
                mean_stoch: stoch.mean(),
                mean_stoch_se: stoch.mean_std_error(),
                var_stoch: stoch.variance(),
                var_stoch_se: stoch.variance_std_error(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MomentReport {
        x: x.clone(),
        theta: theta.clone(),
        rows,
        analytic,
    })
}

/// Two independent estimates of `E[delta^2]`: directly, and as
/// `E[E[delta|X]^2] + E[Var(delta|X)]` from nested sampling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decomposition {
    pub second_moment: f64,
    pub second_moment_se: f64,
    pub bellman_square: f64,
    pub conditional_variance: f64,
    pub nested_se: f64,
}

impl Decomposition {
    pub fn gap(&self) -> f64 {
        self.second_moment - (self.bellman_square + self.conditional_variance)
    }

    pub fn combined_se(&self) -> f64 {
        self.second_moment_se.hypot(self.nested_se)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn td_square_decomposition(
    model: &ModelSpec,
    sampler: StationarySampler,
    phi: &dyn FeatureMap,
    theta: &Theta,
    dt: f64,
    stochastic: bool,
    n_outer: usize,
    n_inner: usize,
    stream: &RngStream,
) -> Result<Decomposition> {
    if n_inner < 2 || n_outer < 2 {
        return Err(Error::domain("nested sampling needs at least 2 outer and 2 inner draws"));
    }
    if !(dt > 0.0) {
        return Err(Error::domain(format!("time step must be positive, got {dt}")));
    }
    check_dim(phi.num_features(), theta.len())?;
    check_dim(model.dim(), phi.state_dim())?;
    let th = theta.as_slice();
    let td = |obs: &crate::observe::Observation| {
        if stochastic {
            stochastic_unchecked(obs, th, phi, model).delta
        } else {
            td_kernel(obs, th, phi, model.rho(), None).delta
        }
    };

    let mut states = sampler.start(model)?;
    let mut rng = stream.child(0).rng();
    let mut direct = Welford::new();
    for _ in 0..n_outer * n_inner {
        let x = states.sample(&mut rng);
        let obs = observe_unchecked(model, &x, dt, ObservationMode::Simulator, 1.0, &mut rng);
        let v = td(&obs);
        direct.add(v * v);
    }

    let mut states = sampler.start(model)?;
    let mut rng = stream.child(1).rng();
    let mut bell = Welford::new();
    let mut var = Welford::new();
    let mut total = Welford::new();
    for _ in 0..n_outer {
        let x = states.sample(&mut rng);
        let mut inner = Welford::new();
        for _ in 0..n_inner {
            let obs = observe_unchecked(model, &x, dt, ObservationMode::Simulator, 1.0, &mut rng);
            inner.add(td(&obs));
        }
        // unbiased for E[delta|X]^2
        let b2 = inner.mean() * inner.mean() - inner.variance() / n_inner as f64;
        bell.add(b2);
        var.add(inner.variance());
        total.add(b2 + inner.variance());
    }
    Ok(Decomposition {
        second_moment: direct.mean(),
        second_moment_se: direct.std_error(),
        bellman_square: bell.mean(),
        conditional_variance: var.mean(),
        nested_se: total.std_error(),
    })
}

/// Quadratic forms of the residual-gradient objective and their minimisers.
///
/// With `Q = E[L phi (L phi)^T]`, `B_ij = E[tr(C D^2 phi_i C D^2 phi_j)] / 2`
/// (`C = sigma sigma^T`) and `q = E[r L phi]`, the mean-field objective of
/// regularised RG is `theta^T (Q + B) theta - 2 q^T theta + mu |theta|^2`
/// up to a constant.
#[derive(Clone, Debug)]
pub struct RgLimits {
    pub mu: f64,
    pub q_matrix: DMatrix<f64>,
    pub hessian_bias: DMatrix<f64>,
    pub q_vec: DVector<f64>,
    /// Minimiser with the Hessian-bias term.
    pub theta_rg: Theta,
    pub theta_rg_se: DVector<f64>,
    /// Minimiser without it.
    pub theta_tilde: Theta,
    pub theta_tilde_se: DVector<f64>,
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let min = sym.symmetric_eigenvalues().min();
    if !(min > 0.0) {
        return Err(Error::Indefinite { smallest_eigenvalue: min });
    }
    solve(&sym, rhs)
}

pub fn rg_limits(
    model: &ModelSpec,
    sampler: StationarySampler,
    phi: &dyn FeatureMap,
    mu: f64,
    n: usize,
    stream: &RngStream,
) -> Result<RgLimits> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::domain(format!("mu must be finite and >= 0, got {mu}")));
    }
    let nf = phi.num_features();
    let d = phi.state_dim();
    let width = 2 * nf * nf + nf;
    let est = batch_estimate(model, sampler, phi, n, stream, width, |jet, _, acc| {
        let ch: Vec<Vec<f64>> = (0..nf).map(|i| jet.cov_hess(i, d)).collect();
        for i in 0..nf {
            for j in 0..nf {
                acc[i * nf + j] += jet.lphi[i] * jet.lphi[j];
                let mut tr = 0.0;
                for a in 0..d {
                    for b in 0..d {
                        tr += ch[i][a * d + b] * ch[j][b * d + a];
                    }
                }
                acc[nf * nf + i * nf + j] += 0.5 * tr;
            }
            acc[2 * nf * nf + i] += jet.reward * jet.lphi[i];
        }
    })?;
    let split = |v: &[f64]| {
        (
            square(&v[..nf * nf], nf),
            square(&v[nf * nf..2 * nf * nf], nf),
            DVector::from_column_slice(&v[2 * nf * nf..]),
        )
    };
    let (q_matrix, hessian_bias, q_vec) = split(&est.mean());
    let theta_rg = solve_spd(&regularised(&(&q_matrix + &hessian_bias), mu), &q_vec)?;
    let theta_tilde = solve_spd(&regularised(&q_matrix, mu), &q_vec)?;

    let mut rows_rg = Vec::with_capacity(BATCHES);
    let mut rows_tilde = Vec::with_capacity(BATCHES);
    for b in &est.batches {
        let (q, hb, qv) = split(b);
        rows_rg.push(solve_spd(&regularised(&(&q + &hb), mu), &qv)?.iter().copied().collect());
        rows_tilde.push(solve_spd(&regularised(&q, mu), &qv)?.iter().copied().collect());
    }
    Ok(RgLimits {
        mu,
        q_matrix,
        hessian_bias,
        q_vec,
        theta_rg: to_theta(&theta_rg),
        theta_rg_se: DVector::from_vec(column_std_error(&rows_rg)),
        theta_tilde: to_theta(&theta_tilde),
        theta_tilde_se: DVector::from_vec(column_std_error(&rows_tilde)),
    })
}

/// Constants of the spectral bound
/// `|Im lambda| <= sqrt(2 / (rho sigma^2)) * sup |b + sigma^2 grad(ln m) / 2| * Re lambda`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralBound {
    pub rho: f64,
    pub sigma2: f64,
    pub drift_score_sup: f64,
}

impl SpectralBound {
    pub fn factor(&self) -> f64 {
        (2.0 / (self.rho * self.sigma2)).sqrt() * self.drift_score_sup
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceReport {
    /// `tr(H H^{-T})`.
    pub trace_h_hinvt: f64,
    pub trace_s: f64,
    /// Eigenvalues of the symmetric part, ascending.
    pub s_spectrum: Vec<f64>,
    pub h_eigenvalues: Vec<Complex<f64>>,
    /// Largest `|Im lambda| / Re lambda` over the eigenvalues of `H`.
    pub max_imag_ratio: f64,
    pub bound_holds: Option<bool>,
}

pub fn trace_diagnostics(h: &DMatrix<f64>, bound: Option<SpectralBound>) -> Result<TraceReport> {
    check_dim(h.nrows(), h.ncols())?;
    let sv = h.singular_values();
    if !(sv.min() > 1e-12 * sv.max()) {
        return Err(Error::Singular {
            smallest_singular_value: sv.min(),
        });
    }
    let inv_t = h
        .clone()
        .try_inverse()
        .ok_or(Error::Singular {
            smallest_singular_value: sv.min(),
        })?
        .transpose();
    let s = (h + h.transpose()) * 0.5;
    let mut s_spectrum: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    s_spectrum.sort_by(f64::total_cmp);
    let h_eigenvalues: Vec<Complex<f64>> = h.complex_eigenvalues().iter().copied().collect();
    let max_imag_ratio = h_eigenvalues
        .iter()
        .map(|l| if l.im == 0.0 { 0.0 } else { l.im.abs() / l.re })
        .fold(0.0f64, |a, r| if r.is_nan() || r < 0.0 { f64::INFINITY } else { a.max(r) });
    let bound_holds = bound.map(|b| {
        h_eigenvalues
            .iter()
            .all(|l| l.re > 0.0 && l.im.abs() <= b.factor() * l.re * (1.0 + 1e-9))
    });
    Ok(TraceReport {
        trace_h_hinvt: (h * inv_t).trace(),
        trace_s: s.trace(),
        s_spectrum,
        h_eigenvalues,
        max_imag_ratio,
        bound_holds,
    })
}
