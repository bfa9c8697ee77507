use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::DMatrix;

use crate::env::TabularMdp;
use crate::error::{ensure, Result};
use crate::exact::{action_values, check_policy_table, perf_stats};

/// Largest `−cR` fed to the exponential; beyond it the transform saturates.
const MAX_EXPONENT: f64 = 700.0;
static SATURATION_WARNED: AtomicBool = AtomicBool::new(false);

/// `R̃ = (1 − e^{−cR})/c`, evaluated with `expm1` so that small `cR` keeps full
/// precision. Very negative `cR` is clamped (with a one-time warning).
pub fn exp_utility_transform(r: f64, c: f64) -> f64 {
    let mut x = c * r;
    if x < -MAX_EXPONENT {
        if !SATURATION_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("exponential utility saturated at c·r = {x:e}");
        }
        x = -MAX_EXPONENT;
    }
    -(-x).exp_m1() / c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpUtilityGap {
    pub c: f64,
    /// `−(1/c) log((1−γ) E[Σ γ^t e^{−cR_t}])`.
    pub lhs: f64,
    /// `J − (c/2) ν²`.
    pub rhs: f64,
    pub gap: f64,
}

/// Exact comparison of the exponential-utility objective with its
/// mean-volatility approximation for each `c`.
pub fn check_exp_utility_approx(mdp: &TabularMdp, pi: &DMatrix<f64>, c_list: &[f64]) -> Result<Vec<ExpUtilityGap>> {
    check_policy_table(mdp, pi)?;
    let stats = perf_stats(mdp, pi, 0.0)?;
    c_list
        .iter()
        .map(|&c| {
            ensure!(c > 0.0 && c.is_finite(), "c must be positive, got {c}");
            let (_, v) = action_values(mdp, pi, &mdp.reward().map(|r| (-c * r).exp()))?;
            let lhs = -((1.0 - mdp.gamma()) * mdp.mu().dot(&v)).ln() / c;
            let rhs = stats.j - 0.5 * c * stats.nu2;
            Ok(ExpUtilityGap { c, lhs, rhs, gap: lhs - rhs })
        })
        .collect()
}
