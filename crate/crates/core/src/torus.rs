//! Arithmetic on the flat torus `R^d / Z^d` with canonical cell `[-0.5, 0.5)^d`.

use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Inline storage for state-space vectors; no heap traffic for `d <= 4`.
pub type Coords = SmallVec<[f64; 4]>;

/// Canonical representative of a scalar modulo 1, in `[-0.5, 0.5)`.
///
/// The caller is responsible for finiteness.
#[inline]
pub fn wrap_scalar(x: f64) -> f64 {
    let mut y = x - (x + 0.5).floor();
    // rounding in `x + 0.5` can land exactly on the excluded endpoint
    if y >= 0.5 {
        y -= 1.0;
    } else if y < -0.5 {
        y += 1.0;
    }
    y
}

/// A point of the torus, stored by its canonical coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusPoint {
    coords: Coords,
}

impl TorusPoint {
    /// Canonicalises `x`; fails on non-finite input.
    pub fn new(x: &[f64]) -> Result<Self> {
        wrap(x)
    }

    pub fn scalar(x: f64) -> Result<Self> {
        wrap(&[x])
    }

    /// Builds a point from coordinates that are already finite. Used on hot
    /// paths where the input is produced by finite arithmetic.
    #[inline]
    pub(crate) fn from_finite(x: impl IntoIterator<Item = f64>) -> Self {
        TorusPoint {
            coords: x.into_iter().map(wrap_scalar).collect(),
        }
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

impl AsRef<[f64]> for TorusPoint {
    fn as_ref(&self) -> &[f64] {
        &self.coords
    }
}

/// Componentwise canonical representative of `x` in `[-0.5, 0.5)`.
pub fn wrap(x: &[f64]) -> Result<TorusPoint> {
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::domain(format!("cannot wrap non-finite coordinate {bad}")));
    }
    Ok(TorusPoint::from_finite(x.iter().copied()))
}

/// Minimal-magnitude representative of `y - x`; each component in `[-0.5, 0.5)`.
pub fn torus_displacement(x: &TorusPoint, y: &TorusPoint) -> Result<Coords> {
    crate::error::check_dim(x.dim(), y.dim())?;
    Ok(displacement_unchecked(x.coords(), y.coords()))
}

#[inline]
pub(crate) fn displacement_unchecked(x: &[f64], y: &[f64]) -> Coords {
    x.iter().zip(y).map(|(a, b)| wrap_scalar(b - a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_scalar(0.0), 0.0);
        assert_eq!(wrap_scalar(0.5), -0.5);
        assert!((wrap_scalar(1.3) - 0.3).abs() < 1e-12);
        assert_eq!(wrap_scalar(-0.5), -0.5);
        assert!((wrap_scalar(-2.75) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn wrap_rejects_non_finite() {
        assert!(matches!(wrap(&[f64::NAN]), Err(Error::Domain(_))));
        assert!(wrap(&[0.1, f64::INFINITY]).is_err());
    }

    #[test]
    fn wrap_never_returns_upper_endpoint() {
        let x = -0.5 - 1e-17;
        let y = wrap_scalar(x);
        assert!((-0.5..0.5).contains(&y));
        let y = wrap_scalar(0.5 - 1e-17);
        assert!((-0.5..0.5).contains(&y));
    }

    #[test]
    fn displacement_examples() {
        let p = |v: f64| TorusPoint::scalar(v).unwrap();
        let d = torus_displacement(&p(0.4), &p(0.4)).unwrap();
        assert_eq!(d[0], 0.0);
        let d = torus_displacement(&p(0.45), &p(-0.45)).unwrap();
        assert!((d[0] - 0.1).abs() < 1e-12);
        let d = torus_displacement(&p(-0.2), &p(0.1)).unwrap();
        assert!((d[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn displacement_dimension_mismatch() {
        let a = TorusPoint::new(&[0.1, 0.2]).unwrap();
        let b = TorusPoint::scalar(0.1).unwrap();
        assert!(matches!(
            torus_displacement(&a, &b),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
    }

    proptest! {
        #[test]
        fn wrap_is_canonical_and_idempotent(x in -1e6f64..1e6) {
            let y = wrap_scalar(x);
            prop_assert!((-0.5..0.5).contains(&y));
            prop_assert_eq!(wrap_scalar(y), y);
        }

        #[test]
        fn wrap_is_periodic(x in -100f64..100.0, n in -50i32..50) {
            let a = wrap_scalar(x);
            let b = wrap_scalar(x + f64::from(n));
            // equal modulo 1 up to rounding of the shift
            prop_assert!(wrap_scalar(a - b).abs() < 1e-9);
        }

        #[test]
        fn displacement_is_minimal(x in -0.5f64..0.5, y in -0.5f64..0.5) {
            let d = displacement_unchecked(&[x], &[y])[0];
            prop_assert!((-0.5..0.5).contains(&d));
            prop_assert!(wrap_scalar(x + d - y).abs() < 1e-12);
        }
    }
}
