use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};

const POWER_SEED: u64 = 0x005e_ed0f_90e7;
const POWER_MAX_ITER: usize = 200_000;
const POWER_REL_TOL: f64 = 1e-14;

/// Sample covariance with divisor `N`: `S = (1/N) Σ (x_i − x̄)(x_i − x̄)^T`.
pub fn sample_covariance(vectors: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    ensure!(vectors.len() >= 2, "sample covariance needs at least 2 vectors, got {}", vectors.len());
    let m = vectors[0].len();
    ensure!(vectors.iter().all(|v| v.len() == m), "sample covariance: vectors of unequal length");
    let n = vectors.len() as f64;
    let mut mean = DVector::zeros(m);
    for v in vectors {
        mean += v;
    }
    mean /= n;
    let mut s = DMatrix::zeros(m, m);
    for v in vectors {
        let c = v - &mean;
        s.ger(1.0, &c, &c, 1.0);
    }
    s /= n;
    Ok(symmetric_part(&s))
}

pub fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix, by power
/// iteration from a fixed pseudo-random start.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    if n == 0 || a.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v = DVector::from_fn(n, |_, _| 1.0 + 0.5 * rng.random::<f64>());
    v.normalize_mut();
    let mut rayleigh = 0.0_f64;
    for _ in 0..POWER_MAX_ITER {
        let w = a * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - rayleigh).abs() <= POWER_REL_TOL * next.abs() {
            return next.max(0.0);
        }
        rayleigh = next;
    }
    log::warn!("power iteration hit the iteration cap ({POWER_MAX_ITER})");
    rayleigh.max(0.0)
}

/// Spectral norm of an arbitrary square matrix: `sqrt(λ_max(AᵀA))`.
pub fn spectral_norm_general(a: &DMatrix<f64>) -> f64 {
    spectral_norm(&(a.transpose() * a)).sqrt()
}
