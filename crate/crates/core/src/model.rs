//! Diffusion/reward models and their generator.
//!
//! A model is the tuple `(r, b, sigma, rho)` of
//! `V(x) = E[ int_0^inf e^{-rho t} r(X_t) dt | X_0 = x ]` with
//! `dX = b(X) dt + sigma(X) dW` on the torus. The generator
//! `L v = rho v - tr(sigma sigma^T D^2 v) / 2 - b . grad v` satisfies `L V = r`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::features::{FeatureFamily, Theta};
use crate::torus::Coords;

pub type RewardFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Writes a vector (drift, length `d`) or a row-major matrix (diffusion,
/// `d x d_W`) into the output slice.
pub type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub struct ModelSpec {
    dim: usize,
    noise_dim: usize,
    rho: f64,
    reward: RewardFn,
    drift: FieldFn,
    diffusion: FieldFn,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("rho", &self.rho)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    pub fn new(
        dim: usize,
        noise_dim: usize,
        rho: f64,
        reward: RewardFn,
        drift: FieldFn,
        diffusion: FieldFn,
    ) -> Result<Self> {
        if dim == 0 || noise_dim == 0 {
            return Err(Error::domain("state and noise dimensions must be positive"));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::domain(format!("discount rate must be positive, got {rho}")));
        }
        Ok(ModelSpec {
            dim,
            noise_dim,
            rho,
            reward,
            drift,
            diffusion,
        })
    }

    /// Convenience constructor for a constant (row-major `d x d_W`) diffusion.
    pub fn with_constant_diffusion(
        dim: usize,
        noise_dim: usize,
        rho: f64,
        reward: RewardFn,
        drift: FieldFn,
        sigma: Vec<f64>,
    ) -> Result<Self> {
        check_dim(dim * noise_dim, sigma.len())?;
        let diffusion: FieldFn = Arc::new(move |_, out: &mut [f64]| out.copy_from_slice(&sigma));
        Self::new(dim, noise_dim, rho, reward, drift, diffusion)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    #[inline]
    pub fn reward(&self, x: &[f64]) -> f64 {
        (self.reward)(x)
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    #[inline]
    pub fn drift(&self, x: &[f64]) -> Coords {
        let mut out = Coords::from_elem(0.0, self.dim);
        self.drift_into(x, &mut out);
        out
    }

    #[inline]
    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    /// Row-major `d x d_W` matrix `sigma(x)`.
    pub fn diffusion(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.noise_dim];
        self.diffusion_into(x, &mut out);
        out
    }

    /// Row-major `d x d` matrix `sigma(x) sigma(x)^T`.
    pub fn covariance(&self, x: &[f64]) -> Vec<f64> {
        let s = self.diffusion(x);
        let (d, w) = (self.dim, self.noise_dim);
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..w).map(|k| s[i * w + k] * s[j * w + k]).sum();
            }
        }
        out
    }

    /// Checks that reward, drift and diffusion are finite on a uniform grid
    /// (per axis, `points` nodes; only the first axis is swept for `d > 1`).
    pub fn validate_on_grid(&self, points: usize) -> Result<()> {
        let mut x = vec![0.0; self.dim];
        for i in 0..points {
            x[0] = -0.5 + i as f64 / points as f64;
            let r = self.reward(&x);
            let b = self.drift(&x);
            let s = self.diffusion(&x);
            if !r.is_finite() || b.iter().chain(&s).any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("model is not finite at x = {x:?}")));
            }
        }
        Ok(())
    }
}

/// A twice-differentiable scalar field on the torus.
pub trait ScalarField {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Coords;
    /// Row-major `d x d`.
    fn hessian(&self, x: &[f64]) -> Vec<f64>;
}

/// `L v(x) = rho v(x) - tr(sigma sigma^T D^2 v(x)) / 2 - b(x) . grad v(x)`.
pub fn generator_apply(model: &ModelSpec, field: &dyn ScalarField, x: &[f64]) -> Result<f64> {
    check_dim(model.dim(), field.dim())?;
    check_dim(model.dim(), x.len())?;
    let d = model.dim();
    let cov = model.covariance(x);
    let hess = field.hessian(x);
    let grad = field.gradient(x);
    let drift = model.drift(x);
    let trace: f64 = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| cov[i * d + j] * hess[j * d + i])
        .sum();
    let transport: f64 = drift.iter().zip(&grad).map(|(b, g)| b * g).sum();
    Ok(model.rho() * field.value(x) - 0.5 * trace - transport)
}

/// One-dimensional gradient-drift benchmark with closed-form value function
/// `V(x) = sin(2 pi x)` and invariant density `m(x) = sqrt(3) / (2 - cos(2 pi x))`.
#[derive(Clone, Debug)]
pub struct BenchmarkModel {
    rho: f64,
    sigma2: f64,
    spec: ModelSpec,
}

const TWO_PI: f64 = 2.0 * PI;
const SQRT_3: f64 = 1.732_050_807_568_877_2;

impl BenchmarkModel {
    pub fn new(rho: f64, sigma2: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::domain(format!("rho must be positive, got {rho}")));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::domain(format!("sigma2 must be positive, got {sigma2}")));
        }
        let reward: RewardFn = Arc::new(move |x: &[f64]| benchmark_reward(rho, sigma2, x[0]));
        let drift: FieldFn = Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = benchmark_drift(sigma2, x[0]));
        let spec = ModelSpec::with_constant_diffusion(1, 1, rho, reward, drift, vec![sigma2.sqrt()])?;
        Ok(BenchmarkModel { rho, sigma2, spec })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// `U(x) = -(sigma^2 / 2) ln(2 - cos(2 pi x))`.
    pub fn potential(&self, x: f64) -> f64 {
        -0.5 * self.sigma2 * (2.0 - (TWO_PI * x).cos()).ln()
    }

    /// `b = U'`.
    pub fn drift(&self, x: f64) -> f64 {
        benchmark_drift(self.sigma2, x)
    }

    pub fn reward(&self, x: f64) -> f64 {
        benchmark_reward(self.rho, self.sigma2, x)
    }

    pub fn value(&self, x: f64) -> f64 {
        (TWO_PI * x).sin()
    }

    pub fn value_derivative(&self, x: f64) -> f64 {
        TWO_PI * (TWO_PI * x).cos()
    }

    pub fn value_second_derivative(&self, x: f64) -> f64 {
        -TWO_PI * TWO_PI * (TWO_PI * x).sin()
    }

    /// The exact value function as a [`ScalarField`].
    pub fn value_field(&self) -> ExactValue {
        ExactValue
    }

    /// Invariant density on `[-0.5, 0.5)`.
    pub fn density(&self, x: f64) -> f64 {
        SQRT_3 / (2.0 - (TWO_PI * x).cos())
    }

    /// `m([-0.5, x])`, continued across the branch of `tan` at the cell edges.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= -0.5 {
            return 0.0;
        }
        if x >= 0.5 {
            return 1.0;
        }
        (SQRT_3 * (PI * x).tan()).atan() / PI + 0.5
    }

    /// `F^{-1}(z) = atan(tan(pi (z - 1/2)) / sqrt(3)) / pi`, valued in `[-0.5, 0.5]`.
    pub fn inverse_cdf(&self, z: f64) -> Result<f64> {
        benchmark_inverse_cdf(z)
    }

    /// `sup |b + (sigma^2 / 2) grad ln m|`; here `(sigma^2/2) grad ln m = U' = b`,
    /// so the sup is `2 sup|b| = 2 pi sigma^2 / sqrt(3)`.
    pub fn score_drift_sup(&self) -> f64 {
        TWO_PI * self.sigma2 / SQRT_3
    }

    /// Coordinates of `V` in a feature family, when `V` lies in its span.
    pub fn value_theta(&self, family: &FeatureFamily) -> Option<Theta> {
        match family {
            FeatureFamily::Fourier3 | FeatureFamily::Trig { .. } => {
                let mut theta = Theta::zeros(family.num_features());
                theta.as_mut_slice()[1] = 1.0;
                Some(theta)
            }
        }
    }
}

/// `F^{-1}` of the benchmark invariant law; `z` must lie in `[0, 1]`.
pub fn benchmark_inverse_cdf(z: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::domain(format!("inverse cdf argument {z} outside [0, 1]")));
    }
    if z == 0.0 {
        return Ok(-0.5);
    }
    if z == 1.0 {
        return Ok(0.5);
    }
    Ok(((PI * (z - 0.5)).tan() / SQRT_3).atan() / PI)
}

#[inline]
fn benchmark_drift(sigma2: f64, x: f64) -> f64 {
    let (s, c) = (TWO_PI * x).sin_cos();
    -PI * sigma2 * s / (2.0 - c)
}

#[inline]
fn benchmark_reward(rho: f64, sigma2: f64, x: f64) -> f64 {
    let (s, c) = (TWO_PI * x).sin_cos();
    (rho + 4.0 * PI * PI * sigma2 / (2.0 - c)) * s
}

/// `V(x) = sin(2 pi x)`.
#[derive(Clone, Copy, Debug)]
pub struct ExactValue;

impl ScalarField for ExactValue {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64]) -> f64 {
        (TWO_PI * x[0]).sin()
    }

    fn gradient(&self, x: &[f64]) -> Coords {
        Coords::from_elem(TWO_PI * (TWO_PI * x[0]).cos(), 1)
    }

    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        vec![-TWO_PI * TWO_PI * (TWO_PI * x[0]).sin()]
    }
}
