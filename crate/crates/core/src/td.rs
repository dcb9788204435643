//! Temporal differences.
//!
//! With `gamma = exp(-rho dt)`:
//!
//! - standard: `delta = (v(X) - gamma v(X') - dt R) / dt`
//! - stochastic: `delta~ = delta + Z / dt` with
//!   `Z = (X' - X - dt b(X)) . grad_x v(X)`, where `X' - X` is the minimal
//!   torus displacement.
//!
//! Both carry `grad_theta`, the gradient of the temporal difference itself,
//! which residual-gradient methods need; TD(0) uses `phi_x` instead.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::features::{hess_unchecked, FeatureMap, ParamVec, Theta};
use crate::model::ModelSpec;
use crate::observe::{euler_step_scaled, gaussian_noise, Observation};
use crate::rng::{rademacher_rotated, NoiseLaw};
use crate::torus::{displacement_unchecked, Coords, TorusPoint};

#[derive(Clone, Debug, PartialEq)]
pub struct TdValue {
    pub delta: f64,
    /// `Z / dt`; zero for the standard temporal difference.
    pub correction: f64,
    /// Gradient of `delta` with respect to theta.
    pub grad_theta: ParamVec,
    /// `phi(X)`, the TD(0) semi-gradient direction.
    pub phi_x: ParamVec,
}

impl TdValue {
    /// Componentwise mean of a non-empty batch.
    pub fn mean(values: &[TdValue]) -> Option<TdValue> {
        let first = values.first()?;
        let n = values.len() as f64;
        let mut out = TdValue {
            delta: 0.0,
            correction: 0.0,
            grad_theta: ParamVec::from_elem(0.0, first.grad_theta.len()),
            phi_x: first.phi_x.clone(),
        };
        for v in values {
            out.delta += v.delta / n;
            out.correction += v.correction / n;
            for (o, g) in out.grad_theta.iter_mut().zip(&v.grad_theta) {
                *o += g / n;
            }
        }
        Some(out)
    }
}

fn check_obs(obs: &Observation, theta: &Theta, phi: &dyn FeatureMap) -> Result<()> {
    if !(obs.dt > 0.0) {
        return Err(Error::domain(format!("time step must be positive, got {}", obs.dt)));
    }
    check_dim(phi.num_features(), theta.len())?;
    check_dim(phi.state_dim(), obs.x.dim())?;
    check_dim(phi.state_dim(), obs.x_next.dim())
}

/// Shared kernel. `drift_x` is `Some(b(X))` for the stochastic variant.
#[inline]
pub(crate) fn td_kernel(
    obs: &Observation,
    theta: &[f64],
    phi: &dyn FeatureMap,
    rho: f64,
    drift_x: Option<&[f64]>,
) -> TdValue {
    let n = phi.num_features();
    let d = phi.state_dim();
    let dt = obs.dt;
    let gamma = (-rho * dt).exp();
    let mut phi_x = ParamVec::from_elem(0.0, n);
    let mut phi_next = ParamVec::from_elem(0.0, n);
    phi.eval_into(obs.x_next.coords(), &mut phi_next);

    let mut grad = ParamVec::from_elem(0.0, n);
    let mut correction = 0.0;
    match drift_x {
        None => phi.eval_into(obs.x.coords(), &mut phi_x),
        Some(b) => {
            let mut jac = ParamVec::from_elem(0.0, n * d);
            phi.eval_with_jacobian_into(obs.x.coords(), &mut phi_x, &mut jac);
            let disp = displacement_unchecked(obs.x.coords(), obs.x_next.coords());
            let inc: Coords = disp.iter().zip(b).map(|(dx, bj)| dx - dt * bj).collect();
            for i in 0..n {
                let row: f64 = (0..d).map(|j| jac[i * d + j] * inc[j]).sum();
                grad[i] = row / dt;
                correction += theta[i] * row;
            }
            correction /= dt;
        }
    }
    let mut v_x = 0.0;
    let mut v_next = 0.0;
    for i in 0..n {
        v_x += theta[i] * phi_x[i];
        v_next += theta[i] * phi_next[i];
        grad[i] += (phi_x[i] - gamma * phi_next[i]) / dt;
    }
    let delta = (v_x - gamma * v_next - dt * obs.reward) / dt + correction;
    TdValue {
        delta,
        correction,
        grad_theta: grad,
        phi_x,
    }
}

/// Standard temporal difference.
pub fn standard_td(obs: &Observation, theta: &Theta, phi: &dyn FeatureMap, rho: f64) -> Result<TdValue> {
    check_obs(obs, theta, phi)?;
    Ok(td_kernel(obs, theta.as_slice(), phi, rho, None))
}

/// `Z = (X' - X - dt b(X)) . grad_x v(X, theta)` with the torus displacement.
pub fn correction_term(obs: &Observation, theta: &Theta, phi: &dyn FeatureMap, model: &ModelSpec) -> Result<f64> {
    check_obs(obs, theta, phi)?;
    check_dim(model.dim(), obs.x.dim())?;
    let b = model.drift(obs.x.coords());
    let disp = displacement_unchecked(obs.x.coords(), obs.x_next.coords());
    let grad_v = crate::features::grad_unchecked(theta.as_slice(), phi, obs.x.coords());
    Ok(disp
        .iter()
        .zip(&b)
        .zip(&grad_v)
        .map(|((dx, bj), g)| (dx - obs.dt * bj) * g)
        .sum())
}

/// Stochastic temporal difference; uses the drift and discount of `model`.
pub fn stochastic_td(obs: &Observation, theta: &Theta, phi: &dyn FeatureMap, model: &ModelSpec) -> Result<TdValue> {
    check_obs(obs, theta, phi)?;
    check_dim(model.dim(), obs.x.dim())?;
    Ok(stochastic_unchecked(obs, theta.as_slice(), phi, model))
}

#[inline]
pub(crate) fn stochastic_unchecked(obs: &Observation, theta: &[f64], phi: &dyn FeatureMap, model: &ModelSpec) -> TdValue {
    let mut b = Coords::from_elem(0.0, model.dim());
    model.drift_into(obs.x.coords(), &mut b);
    td_kernel(obs, theta, phi, model.rho(), Some(&b))
}

/// How simulated transitions are perturbed inside the generated TDs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseOptions {
    pub law: NoiseLaw,
    /// Multiplier applied to the model diffusion in the dynamics only.
    pub diffusion_scale: f64,
}

impl Default for NoiseOptions {
    fn default() -> Self {
        NoiseOptions {
            law: NoiseLaw::Gaussian,
            diffusion_scale: 1.0,
        }
    }
}

fn draw_noise<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: &TorusPoint,
    theta: &[f64],
    phi: &dyn FeatureMap,
    law: NoiseLaw,
    rng: &mut R,
) -> Result<Coords> {
    match law {
        NoiseLaw::Gaussian => Ok(gaussian_noise(rng, model.noise_dim())),
        NoiseLaw::RademacherRotated => {
            let d = model.dim();
            if model.noise_dim() != d {
                return Err(Error::domain("rotated Rademacher noise needs d_W = d"));
            }
            let h = hess_unchecked(theta, phi, x.coords());
            let mut hm = DMatrix::from_row_slice(d, d, &h);
            // symmetrise away rounding in the feature Hessians
            hm = (&hm + hm.transpose()) * 0.5;
            Ok(rademacher_rotated(&hm, rng)?.iter().copied().collect())
        }
    }
}

/// One simulator transition from `x` with the given noise, and its
/// stochastic temporal difference.
pub fn generated_td<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: &TorusPoint,
    theta: &Theta,
    phi: &dyn FeatureMap,
    dt: f64,
    noise: NoiseOptions,
    rng: &mut R,
) -> Result<TdValue> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain(format!("time step must be positive, got {dt}")));
    }
    check_dim(phi.num_features(), theta.len())?;
    check_dim(model.dim(), x.dim())?;
    check_dim(phi.state_dim(), x.dim())?;
    let (td, _) = generated_unchecked(model, x, theta.as_slice(), phi, dt, noise, rng)?;
    Ok(td)
}

fn generated_unchecked<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: &TorusPoint,
    theta: &[f64],
    phi: &dyn FeatureMap,
    dt: f64,
    noise: NoiseOptions,
    rng: &mut R,
) -> Result<(TdValue, TorusPoint)> {
    let z = draw_noise(model, x, theta, phi, noise.law, rng)?;
    let x_next = euler_step_scaled(model, x.coords(), dt, &z, noise.diffusion_scale);
    let obs = Observation {
        dt,
        x: x.clone(),
        x_next,
        reward: model.reward(x.coords()),
    };
    let td = stochastic_unchecked(&obs, theta, phi, model);
    Ok((td, obs.x_next))
}

/// Average of `n` stochastic TDs along one simulated chain
/// `X_0 = x, X_{i+1} = S_dt(X_i, xi_i)`.
#[allow(clippy::too_many_arguments)]
pub fn multistep_td<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: &TorusPoint,
    theta: &Theta,
    phi: &dyn FeatureMap,
    dt: f64,
    n: usize,
    noise: NoiseOptions,
    rng: &mut R,
) -> Result<TdValue> {
    if n == 0 {
        return Err(Error::domain("multistep length must be at least 1"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain(format!("time step must be positive, got {dt}")));
    }
    check_dim(phi.num_features(), theta.len())?;
    check_dim(model.dim(), x.dim())?;
    check_dim(phi.state_dim(), x.dim())?;
    multistep_chain(model, x, theta.as_slice(), phi, dt, n, noise, rng)
}

#[allow(clippy::too_many_arguments)]
fn multistep_chain<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: &TorusPoint,
    theta: &[f64],
    phi: &dyn FeatureMap,
    dt: f64,
    n: usize,
    noise: NoiseOptions,
    rng: &mut R,
) -> Result<TdValue> {
    let mut cur = x.clone();
    let mut tds = Vec::with_capacity(n);
    for _ in 0..n {
        let (td, next) = generated_unchecked(model, &cur, theta, phi, dt, noise, rng)?;
        tds.push(td);
        cur = next;
    }
    let mut mean = TdValue::mean(&tds).expect("n >= 1");
    mean.phi_x = tds[0].phi_x.clone();
    Ok(mean)
}

/// Average of `batch` stochastic TDs at the same `x` with independent noises.
#[allow(clippy::too_many_arguments)]
pub fn minibatch_td<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: &TorusPoint,
    theta: &Theta,
    phi: &dyn FeatureMap,
    dt: f64,
    batch: usize,
    noise: NoiseOptions,
    rng: &mut R,
) -> Result<TdValue> {
    if batch == 0 {
        return Err(Error::domain("mini-batch size must be at least 1"));
    }
    let tds = (0..batch)
        .map(|_| generated_td(model, x, theta, phi, dt, noise, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(TdValue::mean(&tds).expect("batch >= 1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::fourier_features;
    use crate::model::BenchmarkModel;
    use crate::rng::RngStream;
    use crate::stats::Welford;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn bench_model() -> BenchmarkModel {
        BenchmarkModel::new(1.0, 0.1).unwrap()
    }

    fn p(x: f64) -> TorusPoint {
        TorusPoint::scalar(x).unwrap()
    }

    fn theta_v() -> Theta {
        Theta::from(vec![0.0, 1.0, 0.0])
    }

    fn obs(x: f64, x_next: f64, dt: f64, reward: f64) -> Observation {
        Observation {
            dt,
            x: p(x),
            x_next: p(x_next),
            reward,
        }
    }

    #[test]
    fn zero_theta_gives_minus_reward() {
        let m = bench_model();
        let phi = fourier_features();
        let o = obs(0.1, 0.13, 0.01, 2.5);
        let zero = Theta::zeros(3);
        assert_eq!(standard_td(&o, &zero, &phi, 1.0).unwrap().delta, -2.5);
        assert_eq!(stochastic_td(&o, &zero, &phi, m.spec()).unwrap().delta, -2.5);
        assert_eq!(correction_term(&o, &zero, &phi, m.spec()).unwrap(), 0.0);
    }

    #[test]
    fn standalone_discount_algebra() {
        let phi = fourier_features();
        let theta = Theta::from(vec![0.3, -0.7, 1.1]);
        let (x, dt, rho) = (0.21, 0.05, 1.3);
        let td = standard_td(&obs(x, x, dt, 0.0), &theta, &phi, rho).unwrap();
        let v = crate::features::value(&theta, &phi, &[x]).unwrap();
        let expected = v * (1.0 - (-rho * dt).exp()) / dt;
        assert!((td.delta - expected).abs() < 1e-12);
        assert_eq!(td.correction, 0.0);
    }

    #[test]
    fn zero_time_step_is_rejected() {
        let phi = fourier_features();
        let o = obs(0.1, 0.1, 0.0, 0.0);
        assert!(matches!(standard_td(&o, &theta_v(), &phi, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn correction_vanishes_without_noise() {
        let m = bench_model();
        let phi = fourier_features();
        let x = p(0.31);
        let x_next = euler_step_scaled(m.spec(), x.coords(), 0.01, &[0.0], 1.0);
        let o = Observation {
            dt: 0.01,
            x,
            x_next,
            reward: 0.0,
        };
        assert!(correction_term(&o, &theta_v(), &phi, m.spec()).unwrap().abs() < 1e-15);
    }

    #[test]
    fn correction_example_at_origin() {
        let m = bench_model();
        let phi = fourier_features();
        let x_next = euler_step_scaled(m.spec(), &[0.0], 0.01, &[1.0], 1.0);
        let o = Observation {
            dt: 0.01,
            x: p(0.0),
            x_next,
            reward: m.reward(0.0),
        };
        let z = correction_term(&o, &theta_v(), &phi, m.spec()).unwrap();
        let expected = (0.01f64 * 0.1).sqrt() * 2.0 * PI;
        assert!((z - expected).abs() < 1e-12);
        assert!((z - 0.198692).abs() < 1e-6);
        let td = stochastic_td(&o, &theta_v(), &phi, m.spec()).unwrap();
        assert!((td.correction - z / 0.01).abs() < 1e-9);
    }

    #[test]
    fn correction_uses_torus_displacement() {
        let m = bench_model();
        let phi = fourier_features();
        // a step across the seam: raw difference would be ~ -0.99
        let o = obs(0.495, -0.495, 0.01, 0.0);
        let z = correction_term(&o, &theta_v(), &phi, m.spec()).unwrap();
        let inc = 0.01 - 0.01 * m.drift(0.495);
        let expected = inc * 2.0 * PI * (2.0 * PI * 0.495).cos();
        assert!((z - expected).abs() < 1e-12);
    }

    #[test]
    fn deterministic_model_has_no_correction() {
        let model = ModelSpec::with_constant_diffusion(
            1,
            1,
            1.0,
            Arc::new(|x: &[f64]| x[0].cos()),
            Arc::new(|x: &[f64], o: &mut [f64]| o[0] = 0.3 * x[0].sin()),
            vec![0.0],
        )
        .unwrap();
        let phi = fourier_features();
        let theta = Theta::from(vec![0.2, 0.4, -0.1]);
        let mut rng = RngStream::new(0).rng();
        let o = crate::observe::simulator_observation(&model, &p(0.1), 0.01, &mut rng).unwrap();
        let s = standard_td(&o, &theta, &phi, 1.0).unwrap();
        let t = stochastic_td(&o, &theta, &phi, &model).unwrap();
        assert!((s.delta - t.delta).abs() < 1e-12);
    }

    #[test]
    fn grad_theta_matches_finite_differences() {
        let m = bench_model();
        let phi = fourier_features();
        let o = obs(0.17, 0.2, 0.01, 1.3);
        let theta = Theta::from(vec![0.4, -0.2, 0.9]);
        for stochastic in [false, true] {
            let eval = |t: &Theta| {
                if stochastic {
                    stochastic_td(&o, t, &phi, m.spec()).unwrap()
                } else {
                    standard_td(&o, t, &phi, 1.0).unwrap()
                }
            };
            let g = eval(&theta).grad_theta;
            for i in 0..3 {
                let h = 1e-4;
                let mut plus = theta.clone();
                plus.as_mut_slice()[i] += h;
                let mut minus = theta.clone();
                minus.as_mut_slice()[i] -= h;
                let fd = (eval(&plus).delta - eval(&minus).delta) / (2.0 * h);
                // delta is affine in theta: central differences are exact up to rounding
                assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "i={i}");
            }
        }
    }

    #[test]
    fn semi_gradient_and_gradient_differ() {
        let m = bench_model();
        let phi = fourier_features();
        let o = obs(0.1, 0.3, 0.1, 0.0);
        let td = stochastic_td(&o, &theta_v(), &phi, m.spec()).unwrap();
        assert_eq!(td.phi_x.as_slice(), phi.eval(&[0.1]).as_slice());
        assert!(td
            .grad_theta
            .iter()
            .zip(&td.phi_x)
            .any(|(g, f)| (g - f).abs() > 1e-3));
    }

    #[test]
    fn correction_has_zero_conditional_mean() {
        let m = bench_model();
        let phi = fourier_features();
        let mut rng = RngStream::new(21).rng();
        let mut w = Welford::new();
        for _ in 0..200_000 {
            let o = crate::observe::simulator_observation(m.spec(), &p(0.2), 1e-3, &mut rng).unwrap();
            w.add(correction_term(&o, &theta_v(), &phi, m.spec()).unwrap());
        }
        assert!(w.mean().abs() < 4.0 * w.std_error());
    }

    #[test]
    fn multistep_and_minibatch_reduce_to_single_td() {
        let m = bench_model();
        let phi = fourier_features();
        let x = p(0.2);
        let key = RngStream::new(9);
        let single = generated_td(m.spec(), &x, &theta_v(), &phi, 1e-3, NoiseOptions::default(), &mut key.rng()).unwrap();
        let ms = multistep_td(m.spec(), &x, &theta_v(), &phi, 1e-3, 1, NoiseOptions::default(), &mut key.rng()).unwrap();
        let mb = minibatch_td(m.spec(), &x, &theta_v(), &phi, 1e-3, 1, NoiseOptions::default(), &mut key.rng()).unwrap();
        assert_eq!(single, ms);
        assert_eq!(single, mb);
        assert!(multistep_td(m.spec(), &x, &theta_v(), &phi, 1e-3, 0, NoiseOptions::default(), &mut key.rng()).is_err());
        assert!(minibatch_td(m.spec(), &x, &theta_v(), &phi, 1e-3, 0, NoiseOptions::default(), &mut key.rng()).is_err());
    }

    #[test]
    fn constant_reward_aggregates() {
        let model = ModelSpec::with_constant_diffusion(
            1,
            1,
            1.0,
            Arc::new(|_: &[f64]| 3.0),
            Arc::new(|_: &[f64], o: &mut [f64]| o[0] = 0.1),
            vec![0.5],
        )
        .unwrap();
        let phi = fourier_features();
        let zero = Theta::zeros(3);
        let mut rng = RngStream::new(1).rng();
        let ms = multistep_td(&model, &p(0.0), &zero, &phi, 0.01, 5, NoiseOptions::default(), &mut rng).unwrap();
        let mb = minibatch_td(&model, &p(0.0), &zero, &phi, 0.01, 5, NoiseOptions::default(), &mut rng).unwrap();
        assert!((ms.delta + 3.0).abs() < 1e-12);
        assert!((mb.delta + 3.0).abs() < 1e-12);
    }

    #[test]
    fn rademacher_noise_removes_quadratic_variance() {
        let m = bench_model();
        let phi = fourier_features();
        let x = p(0.2);
        let dt = 1e-4;
        let n = 200_000;
        let var_of = |law| {
            let mut rng = RngStream::new(17).rng();
            let mut w = Welford::new();
            let opts = NoiseOptions { law, diffusion_scale: 1.0 };
            for _ in 0..n {
                w.add(generated_td(m.spec(), &x, &theta_v(), &phi, dt, opts, &mut rng).unwrap().delta);
            }
            w.variance()
        };
        let gaussian = var_of(NoiseLaw::Gaussian);
        let rademacher = var_of(NoiseLaw::RademacherRotated);
        // removed term: Var(sigma^2 v'' (xi^2 - 1) / 2) = sigma^4 v''^2 / 2
        let v2 = m.value_second_derivative(0.2);
        let term = 0.5 * 0.01 * v2 * v2;
        assert!(gaussian - rademacher >= 0.95 * term, "{gaussian} vs {rademacher}, term {term}");
        assert!(rademacher < 0.01 * gaussian);
    }
}
