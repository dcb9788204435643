//! Deterministic, splittable random streams and the noise laws used by the
//! simulators.
//!
//! A [`RngStream`] is a key, not a generator: `(seed, path)` is hashed into a
//! ChaCha8 key, so any node of the `(run, iteration, purpose)` tree can be
//! materialised independently and in any order. Sequential draws within one
//! purpose come from a single generator obtained with [`RngStream::rng`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Generator type handed out by [`RngStream::rng`].
pub type StreamRng = ChaCha8Rng;

/// Well-known purpose tags for the last path component.
pub mod purpose {
    pub const STATES: u64 = 0x5354_4154;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const ORACLE: u64 = 0x4f52_4143;
    pub const CHAIN: u64 = 0x4348_4149;
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    path: SmallVec<[u64; 4]>,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            path: SmallVec::new(),
        }
    }

    pub fn with_path(seed: u64, path: &[u64]) -> Self {
        RngStream {
            seed,
            path: path.iter().copied().collect(),
        }
    }

    /// Stream one level deeper in the tree.
    pub fn child(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        RngStream {
            seed: self.seed,
            path,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    fn key(&self) -> [u8; 32] {
        // absorb seed, path length and every component so that prefixes and
        // permutations map to distinct keys
        let mut state = self.seed ^ 0x6a09_e667_f3bc_c908;
        let mut acc = splitmix64(&mut state);
        for (depth, &component) in self.path.iter().enumerate() {
            state ^= component.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (depth as u64 + 1);
            acc ^= splitmix64(&mut state).rotate_left(depth as u32 % 63 + 1);
        }
        state ^= self.path.len() as u64;
        state ^= acc;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        key
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::from_seed(self.key())
    }

    /// `n` i.i.d. standard normal variates.
    pub fn gaussian(&self, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::domain("gaussian: n must be at least 1"));
        }
        let mut rng = self.rng();
        Ok((0..n).map(|_| standard_normal(&mut rng)).collect())
    }
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

#[inline]
pub fn rademacher<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Uniform on the open interval `(0, 1)`.
#[inline]
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Law of the per-step noise vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NoiseLaw {
    #[default]
    Gaussian,
    /// `P^T zeta` with `zeta` i.i.d. Rademacher and `P` diagonalising the
    /// Hessian of the current value function.
    RademacherRotated,
}

fn ensure_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::domain(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            let gap = (m[(i, j)] - m[(j, i)]).abs();
            if !(gap <= 1e-12 * scale) {
                return Err(Error::domain(format!(
                    "matrix is not symmetric: |m[{i},{j}] - m[{j},{i}]| = {gap:e}"
                )));
            }
        }
    }
    Ok(())
}

/// Draws `xi = P^T zeta` where `hessian = P^T D P` and `zeta` has i.i.d.
/// Rademacher entries, so that `xi^T hessian xi = tr(hessian)` for every draw.
pub fn rademacher_rotated<R: Rng + ?Sized>(hessian: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    ensure_symmetric(hessian)?;
    let d = hessian.nrows();
    let zeta = DVector::from_iterator(d, (0..d).map(|_| rademacher(rng)));
    if d == 1 {
        return Ok(zeta);
    }
    // nalgebra: hessian = Q diag Q^T, so P = Q^T and P^T zeta = Q zeta
    let eig = nalgebra::SymmetricEigen::new(hessian.clone());
    Ok(eig.eigenvectors * zeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Welford;

    #[test]
    fn same_key_same_sequence() {
        let a = RngStream::with_path(1, &[0]).gaussian(16).unwrap();
        let b = RngStream::with_path(1, &[0]).gaussian(16).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn different_paths_differ() {
        let base = RngStream::new(7);
        let a = base.child(0).gaussian(8).unwrap();
        let b = base.child(1).gaussian(8).unwrap();
        let c = RngStream::with_path(7, &[0, 0]).gaussian(8).unwrap();
        assert_ne!(a, b);
        assert_ne!(a, c);
        let p = RngStream::with_path(7, &[1, 2]).gaussian(4).unwrap();
        let q = RngStream::with_path(7, &[2, 1]).gaussian(4).unwrap();
        assert_ne!(p, q);
    }

    #[test]
    fn child_equals_explicit_path() {
        let a = RngStream::new(3).child(4).child(5);
        assert_eq!(a, RngStream::with_path(3, &[4, 5]));
    }

    #[test]
    fn gaussian_rejects_zero() {
        assert!(RngStream::new(0).gaussian(0).is_err());
    }

    #[test]
    fn gaussian_moments() {
        let xs = RngStream::with_path(11, &[purpose::NOISE]).gaussian(1_000_000).unwrap();
        let mut w = Welford::new();
        xs.iter().for_each(|&x| w.add(x));
        assert!(w.mean().abs() < 0.005, "mean {}", w.mean());
        assert!((w.variance() - 1.0).abs() < 0.01, "var {}", w.variance());
    }

    #[test]
    fn cross_stream_correlation_is_small() {
        let a = RngStream::with_path(5, &[0]).gaussian(200_000).unwrap();
        let b = RngStream::with_path(5, &[1]).gaussian(200_000).unwrap();
        let corr = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64;
        // 5 standard errors of a product of independent normals
        assert!(corr.abs() < 5.0 / (a.len() as f64).sqrt());
    }

    #[test]
    fn rademacher_rotated_one_dimensional() {
        let h = DMatrix::from_element(1, 1, -3.0);
        let mut rng = RngStream::new(2).rng();
        for _ in 0..32 {
            let xi = rademacher_rotated(&h, &mut rng).unwrap();
            assert!(xi[0] == 1.0 || xi[0] == -1.0);
            assert_eq!((xi.transpose() * &h * &xi)[(0, 0)], -3.0);
        }
    }

    #[test]
    fn rademacher_rotated_zero_matrix() {
        let h = DMatrix::zeros(3, 3);
        let mut rng = RngStream::new(2).rng();
        let xi = rademacher_rotated(&h, &mut rng).unwrap();
        assert_eq!((xi.transpose() * &h * &xi)[(0, 0)], 0.0);
    }

    #[test]
    fn rademacher_rotated_diagonal_all_sign_patterns() {
        // brute force over the four sign patterns
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 5.0]));
        for s0 in [-1.0, 1.0] {
            for s1 in [-1.0, 1.0] {
                let z = DVector::from_vec(vec![s0, s1]);
                assert_eq!((z.transpose() * &h * &z)[(0, 0)], 7.0);
            }
        }
        let mut rng = RngStream::new(9).rng();
        for _ in 0..64 {
            let xi = rademacher_rotated(&h, &mut rng).unwrap();
            let q = (xi.transpose() * &h * &xi)[(0, 0)];
            assert!((q - 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rademacher_rotated_rejects_asymmetric() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let mut rng = RngStream::new(0).rng();
        assert!(matches!(rademacher_rotated(&h, &mut rng), Err(Error::Domain(_))));
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(rademacher_rotated(&h, &mut rng).is_err());
    }
}
