use nalgebra::{DMatrix, DVector};

use super::solve::{occupancy, perf_stats, policy_transition, solve_discounted, value_tables, check_policy_table};
use crate::env::TabularMdp;
use crate::error::{ensure, Result};

/// Mean-volatility advantage `A^λ = R − λ(R − J)² + γ E[V^λ(s')] − V^λ(s)`.
pub fn advantage_lambda(mdp: &TabularMdp, pi: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    Ok(value_tables(mdp, pi, lambda)?.a_lambda)
}

fn weighted(d: &DVector<f64>, pi: &DMatrix<f64>, table: &DMatrix<f64>) -> f64 {
    (0..d.len()).map(|s| d[s] * pi.row(s).dot(&table.row(s))).sum()
}

fn kl_rows(p: &DMatrix<f64>, q: &DMatrix<f64>, s: usize) -> f64 {
    let mut kl = 0.0;
    for a in 0..p.ncols() {
        let pa = p[(s, a)];
        if pa > 0.0 {
            kl += pa * (pa / q[(s, a)]).ln();
        }
    }
    kl.max(0.0)
}

/// Both sides of the performance-difference identity between `π` and `π̃`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfDifference {
    /// `η_π̃ − η_π`.
    pub lhs: f64,
    /// `Σ d_π̃ π̃ A^λ_π + λ [Σ d_π̃ π̃ A_π]²`.
    pub rhs: f64,
    /// Same with the squared bracket scaled by `(1−γ)²`.
    pub rhs_scaled: f64,
    /// `Σ d_π̃ π̃ A^λ_π`, a lower bound on `lhs`.
    pub first_order: f64,
}

pub fn perf_difference(mdp: &TabularMdp, pi: &DMatrix<f64>, pi_tilde: &DMatrix<f64>, lambda: f64) -> Result<PerfDifference> {
    check_policy_table(mdp, pi_tilde)?;
    let tables = value_tables(mdp, pi, lambda)?;
    let plain = value_tables(mdp, pi, 0.0)?;
    let d_tilde = occupancy(mdp, pi_tilde)?.d_mu;
    let first_order = weighted(&d_tilde, pi_tilde, &tables.a_lambda);
    let gap = weighted(&d_tilde, pi_tilde, &plain.a_lambda);
    let eta = perf_stats(mdp, pi, lambda)?.eta;
    let eta_tilde = perf_stats(mdp, pi_tilde, lambda)?.eta;
    let g = mdp.gamma();
    Ok(PerfDifference {
        lhs: eta_tilde - eta,
        rhs: first_order + lambda * gap * gap,
        rhs_scaled: first_order + lambda * (1.0 - g).powi(2) * gap * gap,
        first_order,
    })
}

/// Trust-region surrogate and the KL lower bound on `η_π̃`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateBound {
    pub eta_tilde: f64,
    /// `L^λ_π(π̃) = η_π + Σ d_π π̃ A^λ_π`.
    pub l_lambda: f64,
    /// `max_s |E_{a~π̃} A^λ_π(s, a)|`.
    pub epsilon: f64,
    /// `max_{s,a} |A^λ_π(s, a)|`.
    pub epsilon_max: f64,
    /// `max_s D_KL(π(·|s) ‖ π̃(·|s))`.
    pub kl_max: f64,
    /// `L^λ − 2εγ/(1−γ) · KL^max` with `epsilon`.
    pub bound_rhs: f64,
    /// Same with `epsilon_max`.
    pub bound_rhs_max: f64,
}

impl SurrogateBound {
    /// Amount by which `η_π̃` falls below `bound_rhs` (zero when the bound holds).
    pub fn violation(&self) -> f64 {
        (self.bound_rhs - self.eta_tilde).max(0.0)
    }

    pub fn violation_max(&self) -> f64 {
        (self.bound_rhs_max - self.eta_tilde).max(0.0)
    }
}

pub fn surrogate_and_bound(mdp: &TabularMdp, pi: &DMatrix<f64>, pi_tilde: &DMatrix<f64>, lambda: f64) -> Result<SurrogateBound> {
    check_policy_table(mdp, pi_tilde)?;
    let tables = value_tables(mdp, pi, lambda)?;
    let stats = perf_stats(mdp, pi, lambda)?;
    let d = occupancy(mdp, pi)?.d_mu;
    let l_lambda = stats.eta + weighted(&d, pi_tilde, &tables.a_lambda);
    let n = mdp.n_states();
    let epsilon = (0..n)
        .map(|s| pi_tilde.row(s).dot(&tables.a_lambda.row(s)).abs())
        .fold(0.0, f64::max);
    let epsilon_max = tables.a_lambda.amax();
    let kl_max = (0..n).map(|s| kl_rows(pi, pi_tilde, s)).fold(0.0, f64::max);
    let g = mdp.gamma();
    let penalty = 2.0 * g / (1.0 - g) * kl_max;
    Ok(SurrogateBound {
        eta_tilde: perf_stats(mdp, pi_tilde, lambda)?.eta,
        l_lambda,
        epsilon,
        epsilon_max,
        kl_max,
        bound_rhs: l_lambda - epsilon * penalty,
        bound_rhs_max: l_lambda - epsilon_max * penalty,
    })
}

/// Two solutions of `f = g + γ P_π f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recursion {
    /// Direct linear solve.
    pub f: DVector<f64>,
    /// `(1/(1−γ)) Σ_{s'} d_π(s'|s) g(s')`.
    pub f_occupancy: DVector<f64>,
}

pub fn solve_recursion(mdp: &TabularMdp, pi: &DMatrix<f64>, g: &DVector<f64>) -> Result<Recursion> {
    ensure!(g.len() == mdp.n_states(), "g has length {}, expected {}", g.len(), mdp.n_states());
    ensure!(g.iter().all(|x| x.is_finite()), "g has non-finite entries");
    check_policy_table(mdp, pi)?;
    let p = policy_transition(mdp, pi);
    let f = solve_discounted(&p, mdp.gamma(), &DMatrix::from_column_slice(g.len(), 1, g.as_slice()))?
        .column(0)
        .into_owned();
    let occ = occupancy(mdp, pi)?;
    let f_occupancy = &occ.d_cond * g / (1.0 - mdp.gamma());
    Ok(Recursion { f, f_occupancy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::build_random_tabular;
    use crate::exact::solve_q;

    fn random_table(seed: u64, s: usize, a: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(s, a, |i, j| (((seed + 1) as f64 * 12.9898 + i as f64 * 78.233 + j as f64 * 37.719).sin() * 43758.5453).fract().abs() + 0.05);
        DMatrix::from_fn(s, a, |i, j| m[(i, j)] / m.row(i).sum())
    }

    #[test]
    fn identical_policies_give_zero_difference() {
        let mdp = build_random_tabular(4, 5, 3, 0.9, 1.0).unwrap();
        let pi = random_table(1, 5, 3);
        let pd = perf_difference(&mdp, &pi, &pi, 0.7).unwrap();
        assert!(pd.lhs.abs() < 1e-14 && pd.rhs.abs() < 1e-10);
        let sb = surrogate_and_bound(&mdp, &pi, &pi, 0.7).unwrap();
        assert!((sb.l_lambda - sb.eta_tilde).abs() < 1e-10);
        assert_eq!(sb.kl_max, 0.0);
    }

    #[test]
    fn perf_difference_identity_holds() {
        let mdp = build_random_tabular(5, 6, 3, 0.9, 1.0).unwrap();
        let pi = random_table(2, 6, 3);
        let pt = random_table(3, 6, 3);
        for lambda in [0.0, 0.5, 2.0] {
            let pd = perf_difference(&mdp, &pi, &pt, lambda).unwrap();
            assert!((pd.lhs - pd.rhs).abs() < 1e-10, "{pd:?}");
            assert!(pd.lhs >= pd.first_order - 1e-12);
        }
    }

    #[test]
    fn risk_neutral_advantage_is_q_minus_v() {
        let mdp = build_random_tabular(6, 4, 2, 0.8, 1.0).unwrap();
        let pi = random_table(4, 4, 2);
        let a = advantage_lambda(&mdp, &pi, 0.0).unwrap();
        let q = solve_q(&mdp, &pi).unwrap();
        for s in 0..4 {
            let v = pi.row(s).dot(&q.row(s));
            for b in 0..2 {
                assert!((a[(s, b)] - (q[(s, b)] - v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn recursion_paths_agree() {
        let mdp = build_random_tabular(7, 5, 2, 0.9, 1.0).unwrap();
        let pi = random_table(5, 5, 2);
        let g = DVector::from_fn(5, |i, _| (i as f64 - 2.0) * 0.3);
        let r = solve_recursion(&mdp, &pi, &g).unwrap();
        assert!((r.f - r.f_occupancy).amax() < 1e-10);
        let ones = solve_recursion(&mdp, &pi, &DVector::from_element(5, 1.0)).unwrap();
        assert!(ones.f.iter().all(|x| (x - 10.0).abs() < 1e-10));
    }
}
