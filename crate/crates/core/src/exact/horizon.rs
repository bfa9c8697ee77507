//! Truncated-horizon counterparts of the objective quantities, normalized by
//! `k = (1−γ)/(1−γ^T)` so they are directly comparable with the sampled
//! estimators over episodes of length `T`.

use nalgebra::{DMatrix, DVector};

use super::solve::{check_policy_table, policy_transition};
use crate::env::TabularMdp;
use crate::error::{ensure, Error, Result};
use crate::policy::Policy;
use crate::sampling::horizon_norm;

/// `p_t(s)` for `t = 0..T`.
pub fn state_marginals(mdp: &TabularMdp, pi: &DMatrix<f64>, horizon: usize) -> Result<Vec<DVector<f64>>> {
    check_policy_table(mdp, pi)?;
    let p = policy_transition(mdp, pi).transpose();
    let mut out = Vec::with_capacity(horizon);
    let mut cur = mdp.mu().clone();
    for _ in 0..horizon {
        let next = &p * &cur;
        out.push(cur);
        cur = next;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteHorizonStats {
    /// `J_T = k Σ_{t<T} γ^t E[R_t]`.
    pub j: f64,
    /// `k Σ_{t<T} γ^t E[(R_t − J_T)²]`.
    pub nu2: f64,
    /// `k Σ_{t<T} γ^t E[R_t²]`.
    pub m2: f64,
    pub horizon: usize,
}

fn discounted_expectation(mdp: &TabularMdp, pi: &DMatrix<f64>, marginals: &[DVector<f64>], table: &DMatrix<f64>) -> f64 {
    let g = mdp.gamma();
    let per_state = DVector::from_fn(mdp.n_states(), |s, _| pi.row(s).dot(&table.row(s)));
    let k = horizon_norm(g, marginals.len());
    let mut total = 0.0;
    let mut disc = 1.0;
    for p in marginals {
        total += disc * p.dot(&per_state);
        disc *= g;
    }
    k * total
}

pub fn finite_horizon_stats(mdp: &TabularMdp, pi: &DMatrix<f64>, horizon: usize) -> Result<FiniteHorizonStats> {
    ensure!(horizon >= 1, "horizon must be at least 1");
    let marg = state_marginals(mdp, pi, horizon)?;
    let j = discounted_expectation(mdp, pi, &marg, mdp.reward());
    let m2 = discounted_expectation(mdp, pi, &marg, &mdp.reward().map(|r| r * r));
    let nu2 = discounted_expectation(mdp, pi, &marg, &mdp.reward().map(|r| (r - j) * (r - j)));
    Ok(FiniteHorizonStats { j, nu2, m2, horizon })
}

/// Which truncated objective a gradient refers to. `J_T` inside the squared
/// deviation is held fixed when differentiating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HorizonTarget {
    /// `∇ k Σ_t γ^t E[R_t − λ(R_t − J_T)²]`, i.e. `∇J_T − λ∇ν²_T`.
    Eta,
    /// `∇ Σ_t γ^t E[R_t − λk(R_t − J_T)²]`: the unscaled sum with the
    /// penalty weighted by `k`, `(1/k)∇J_T − λ∇ν²_T`.
    AsPrinted,
}

/// Exact gradient of a truncated-horizon objective for a softmax policy over
/// tabular states:
/// `k Σ_{t<T} γ^t Σ_s p_t(s) Σ_a π ∇log π Q^{(T−t)}(s, a)` where `Q^{(h)}` is
/// the `h`-step action value of the relevant reward.
pub fn finite_horizon_gradient(
    mdp: &TabularMdp,
    policy: &Policy,
    features: &[Vec<f64>],
    horizon: usize,
    lambda: f64,
    target: HorizonTarget,
) -> Result<DVector<f64>> {
    ensure!(horizon >= 1, "horizon must be at least 1");
    if !policy.is_softmax() {
        return Err(Error::validation("exact derivatives need a softmax policy over tabular states"));
    }
    ensure!(features.len() == mdp.n_states(), "{} feature vectors for {} states", features.len(), mdp.n_states());
    let pi = policy.table(features)?;
    let stats = finite_horizon_stats(mdp, &pi, horizon)?;
    let g = mdp.gamma();
    let k = horizon_norm(g, horizon);
    let weight = match target {
        HorizonTarget::Eta => lambda,
        HorizonTarget::AsPrinted => lambda * k,
    };
    let reward = mdp.reward().map(|r| r - weight * (r - stats.j) * (r - stats.j));
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());

    // q_h[h-1] = h-step action values
    let mut q_h: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    q_h.push(reward.clone());
    for _ in 1..horizon {
        let prev = q_h.last().unwrap();
        let v = DVector::from_fn(n_s, |s, _| pi.row(s).dot(&prev.row(s)));
        let q = DMatrix::from_fn(n_s, n_a, |s, a| {
            reward[(s, a)] + g * mdp.next_distribution(s, a).iter().zip(v.iter()).map(|(p, x)| p * x).sum::<f64>()
        });
        q_h.push(q);
    }

    let scores: Vec<Vec<DVector<f64>>> = features
        .iter()
        .enumerate()
        .map(|(s, phi)| {
            let p: Vec<f64> = pi.row(s).iter().copied().collect();
            (0..n_a).map(|a| policy.softmax_score(phi, &p, a)).collect()
        })
        .collect();
    let marg = state_marginals(mdp, &pi, horizon)?;
    let mut grad = DVector::zeros(policy.dim());
    let mut disc = 1.0;
    for (t, p_t) in marg.iter().enumerate() {
        let q = &q_h[horizon - t - 1];
        for s in 0..n_s {
            for a in 0..n_a {
                let w = disc * p_t[s] * pi[(s, a)] * q[(s, a)];
                if w != 0.0 {
                    grad.axpy(w, &scores[s][a], 1.0);
                }
            }
        }
        disc *= g;
    }
    Ok(match target {
        HorizonTarget::Eta => grad * k,
        HorizonTarget::AsPrinted => grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::build_random_tabular;
    use crate::exact::{one_hot_features, perf_stats};
    use rand::{Rng, SeedableRng};

    #[test]
    fn long_horizon_approaches_infinite_quantities() {
        let mdp = build_random_tabular(21, 4, 2, 0.8, 1.0).unwrap();
        let pi = DMatrix::from_element(4, 2, 0.5);
        let fh = finite_horizon_stats(&mdp, &pi, 400).unwrap();
        let st = perf_stats(&mdp, &pi, 0.0).unwrap();
        assert!((fh.j - st.j).abs() < 1e-12);
        assert!((fh.nu2 - st.nu2).abs() < 1e-12);
        assert!((fh.nu2 - (fh.m2 - fh.j * fh.j)).abs() < 1e-12);
    }

    #[test]
    fn finite_horizon_gradient_matches_finite_differences() {
        let mdp = build_random_tabular(22, 4, 3, 0.9, 1.0).unwrap();
        let mut rng = crate::env::SimRng::seed_from_u64(3);
        let theta = DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let policy = Policy::softmax(3, 4).unwrap().with_theta(theta.clone()).unwrap();
        let f = one_hot_features(4);
        let horizon = 7;
        let lambda = 0.6;
        let objective = |th: &DVector<f64>| {
            let pi = policy.clone().with_theta(th.clone()).unwrap().table(&f).unwrap();
            let s = finite_horizon_stats(&mdp, &pi, horizon).unwrap();
            s.j - lambda * s.nu2
        };
        let g = finite_horizon_gradient(&mdp, &policy, &f, horizon, lambda, HorizonTarget::Eta).unwrap();
        let h = 1e-5;
        for i in 0..12 {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (objective(&p) - objective(&m)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "i={i}: {fd} vs {}", g[i]);
        }
        let k = horizon_norm(0.9, horizon);
        let gj = finite_horizon_gradient(&mdp, &policy, &f, horizon, 0.0, HorizonTarget::Eta).unwrap();
        let printed = finite_horizon_gradient(&mdp, &policy, &f, horizon, lambda, HorizonTarget::AsPrinted).unwrap();
        let nu_part = (&gj - &g) / lambda;
        assert!((printed - (gj / k - nu_part * lambda)).amax() < 1e-10);
    }
}
