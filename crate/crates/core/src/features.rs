//! Linear value parametrisations `v(x, theta) = theta . phi(x)` with analytic
//! spatial derivatives.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use smallvec::SmallVec;

use crate::error::{check_dim, Error, Result};
use crate::model::ScalarField;
use crate::torus::Coords;

/// Inline storage for parameter-space vectors.
pub type ParamVec = SmallVec<[f64; 8]>;

/// A feature map `phi: T^d -> R^{d_theta}` with first and second spatial
/// derivatives.
///
/// Layouts are row-major: the Jacobian is `d_theta x d` and the Hessian
/// tensor is `d_theta x d x d`.
pub trait FeatureMap: Send + Sync + fmt::Debug {
    fn num_features(&self) -> usize;

    fn state_dim(&self) -> usize;

    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    fn jacobian_into(&self, x: &[f64], out: &mut [f64]);

    fn hessian_into(&self, x: &[f64], out: &mut [f64]);

    /// `phi(x)` and `D_x phi(x)` together; implementations may share work.
    fn eval_with_jacobian_into(&self, x: &[f64], phi: &mut [f64], jac: &mut [f64]) {
        self.eval_into(x, phi);
        self.jacobian_into(x, jac);
    }

    fn eval(&self, x: &[f64]) -> ParamVec {
        let mut out = ParamVec::from_elem(0.0, self.num_features());
        self.eval_into(x, &mut out);
        out
    }

    fn jacobian(&self, x: &[f64]) -> ParamVec {
        let mut out = ParamVec::from_elem(0.0, self.num_features() * self.state_dim());
        self.jacobian_into(x, &mut out);
        out
    }

    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.state_dim();
        let mut out = vec![0.0; self.num_features() * d * d];
        self.hessian_into(x, &mut out);
        out
    }
}

/// One-dimensional trigonometric features
/// `(1, sin 2 pi x, cos 2 pi x, sin 4 pi x, cos 4 pi x, ...)` up to `order`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrigFeatures {
    order: usize,
}

impl TrigFeatures {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::domain("trigonometric feature order must be at least 1"));
        }
        Ok(TrigFeatures { order })
    }

    pub fn order(&self) -> usize {
        self.order
    }
}

/// `phi(x) = (1, sin 2 pi x, cos 2 pi x)`.
pub fn fourier_features() -> TrigFeatures {
    TrigFeatures { order: 1 }
}

impl FeatureMap for TrigFeatures {
    fn num_features(&self) -> usize {
        2 * self.order + 1
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        for j in 1..=self.order {
            let (s, c) = (2.0 * PI * j as f64 * x[0]).sin_cos();
            out[2 * j - 1] = s;
            out[2 * j] = c;
        }
    }

    fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        for j in 1..=self.order {
            let w = 2.0 * PI * j as f64;
            let (s, c) = (w * x[0]).sin_cos();
            out[2 * j - 1] = w * c;
            out[2 * j] = -w * s;
        }
    }

    fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        for j in 1..=self.order {
            let w = 2.0 * PI * j as f64;
            let (s, c) = (w * x[0]).sin_cos();
            out[2 * j - 1] = -w * w * s;
            out[2 * j] = -w * w * c;
        }
    }

    fn eval_with_jacobian_into(&self, x: &[f64], phi: &mut [f64], jac: &mut [f64]) {
        phi[0] = 1.0;
        jac[0] = 0.0;
        for j in 1..=self.order {
            let w = 2.0 * PI * j as f64;
            let (s, c) = (w * x[0]).sin_cos();
            phi[2 * j - 1] = s;
            phi[2 * j] = c;
            jac[2 * j - 1] = w * c;
            jac[2 * j] = -w * s;
        }
    }
}

/// Config-level selector for a feature family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureFamily {
    Fourier3,
    Trig { order: usize },
}

impl FeatureFamily {
    pub fn num_features(&self) -> usize {
        match self {
            FeatureFamily::Fourier3 => 3,
            FeatureFamily::Trig { order } => 2 * order + 1,
        }
    }

    pub fn build(&self) -> Result<TrigFeatures> {
        match *self {
            FeatureFamily::Fourier3 => Ok(fourier_features()),
            FeatureFamily::Trig { order } => TrigFeatures::new(order),
        }
    }
}

impl fmt::Display for FeatureFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureFamily::Fourier3 => write!(f, "fourier3"),
            FeatureFamily::Trig { order } => write!(f, "trig(order={order})"),
        }
    }
}

impl FromStr for FeatureFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "fourier3" {
            return Ok(FeatureFamily::Fourier3);
        }
        let order = s
            .strip_prefix("trig(")
            .and_then(|r| r.strip_suffix(')'))
            .map(|inner| inner.trim())
            .map(|inner| inner.strip_prefix("order").map_or(inner, |r| r.trim_start().trim_start_matches('=')))
            .and_then(|n| n.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::Config(format!("unknown feature family `{s}`")))?;
        if order == 0 {
            return Err(Error::Config("trig order must be at least 1".into()));
        }
        Ok(FeatureFamily::Trig { order })
    }
}

/// Parameter vector of a linear value function.
#[derive(Clone, Debug, PartialEq)]
pub struct Theta(Vec<f64>);

impl Theta {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("theta entries must be finite"));
        }
        Ok(Theta(values))
    }

    pub fn zeros(n: usize) -> Self {
        Theta(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn distance_squared(&self, other: &Theta) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}

impl From<Vec<f64>> for Theta {
    fn from(v: Vec<f64>) -> Self {
        Theta(v)
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            match f.precision() {
                Some(p) => write!(f, "{v:.p$}")?,
                None => write!(f, "{v}")?,
            }
        }
        write!(f, ")")
    }
}

fn check_inputs(theta: &Theta, phi: &dyn FeatureMap, x: &[f64]) -> Result<()> {
    check_dim(phi.num_features(), theta.len())?;
    check_dim(phi.state_dim(), x.len())
}

/// `v(x, theta) = theta . phi(x)`.
pub fn value(theta: &Theta, phi: &dyn FeatureMap, x: &[f64]) -> Result<f64> {
    check_inputs(theta, phi, x)?;
    Ok(theta.dot(&phi.eval(x)))
}

/// `grad_x v = D_x phi(x)^T theta`.
pub fn value_grad_x(theta: &Theta, phi: &dyn FeatureMap, x: &[f64]) -> Result<Coords> {
    check_inputs(theta, phi, x)?;
    Ok(grad_unchecked(theta.as_slice(), phi, x))
}

/// `D^2_x v = sum_i theta_i D^2_x phi_i(x)`, row-major `d x d`.
pub fn value_hess_x(theta: &Theta, phi: &dyn FeatureMap, x: &[f64]) -> Result<Vec<f64>> {
    check_inputs(theta, phi, x)?;
    Ok(hess_unchecked(theta.as_slice(), phi, x))
}

pub(crate) fn grad_unchecked(theta: &[f64], phi: &dyn FeatureMap, x: &[f64]) -> Coords {
    let d = phi.state_dim();
    let jac = phi.jacobian(x);
    (0..d)
        .map(|j| theta.iter().enumerate().map(|(i, t)| t * jac[i * d + j]).sum())
        .collect()
}

pub(crate) fn hess_unchecked(theta: &[f64], phi: &dyn FeatureMap, x: &[f64]) -> Vec<f64> {
    let d = phi.state_dim();
    let h = phi.hessian(x);
    let mut out = vec![0.0; d * d];
    for (i, t) in theta.iter().enumerate() {
        for (o, hv) in out.iter_mut().zip(&h[i * d * d..(i + 1) * d * d]) {
            *o += t * hv;
        }
    }
    out
}

/// `x -> theta . phi(x)` viewed as a [`ScalarField`].
#[derive(Clone, Copy, Debug)]
pub struct LinearValue<'a> {
    theta: &'a [f64],
    phi: &'a dyn FeatureMap,
}

impl<'a> LinearValue<'a> {
    pub fn new(theta: &'a Theta, phi: &'a dyn FeatureMap) -> Result<Self> {
        check_dim(phi.num_features(), theta.len())?;
        Ok(LinearValue {
            theta: theta.as_slice(),
            phi,
        })
    }
}

impl ScalarField for LinearValue<'_> {
    fn dim(&self) -> usize {
        self.phi.state_dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.theta.iter().zip(self.phi.eval(x)).map(|(t, p)| t * p).sum()
    }

    fn gradient(&self, x: &[f64]) -> Coords {
        grad_unchecked(self.theta, self.phi, x)
    }

    fn hessian(&self, x: &[f64]) -> Vec<f64> {
        hess_unchecked(self.theta, self.phi, x)
    }
}
