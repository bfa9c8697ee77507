use nalgebra::{DMatrix, DVector};

use super::solve::{action_values, occupancy, perf_stats, policy_transition, solve_discounted, PerfStats};
use crate::env::TabularMdp;
use crate::error::{ensure, Error, Result};
use crate::numerics::symmetric_part;
use crate::policy::Policy;

/// One-hot feature vectors for `n` states: the tabular parameterization.
pub fn one_hot_features(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|s| {
            let mut v = vec![0.0; n];
            v[s] = 1.0;
            v
        })
        .collect()
}

fn policy_table(mdp: &TabularMdp, policy: &Policy, features: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if !policy.is_softmax() {
        return Err(Error::validation("exact derivatives need a softmax policy over tabular states"));
    }
    ensure!(
        features.len() == mdp.n_states(),
        "{} feature vectors for {} states",
        features.len(),
        mdp.n_states()
    );
    ensure!(policy.n_actions() == mdp.n_actions(), "policy has {} actions, MDP has {}", policy.n_actions(), mdp.n_actions());
    policy.table(features)
}

/// `scores[s][a] = ∇ log π(a|s)`.
fn score_table(policy: &Policy, features: &[Vec<f64>], pi: &DMatrix<f64>) -> Vec<Vec<DVector<f64>>> {
    features
        .iter()
        .enumerate()
        .map(|(s, phi)| {
            let p: Vec<f64> = pi.row(s).iter().copied().collect();
            (0..pi.ncols()).map(|a| policy.softmax_score(phi, &p, a)).collect()
        })
        .collect()
}

fn weighted_score_sum(d: &DVector<f64>, pi: &DMatrix<f64>, scores: &[Vec<DVector<f64>>], q: &DMatrix<f64>, m: usize) -> DVector<f64> {
    let mut g = DVector::zeros(m);
    for s in 0..pi.nrows() {
        for a in 0..pi.ncols() {
            let w = d[s] * pi[(s, a)] * q[(s, a)];
            if w != 0.0 {
                g.axpy(w, &scores[s][a], 1.0);
            }
        }
    }
    g
}

fn risk_reward(mdp: &TabularMdp, j: f64, lambda: f64) -> DMatrix<f64> {
    mdp.reward().map(|r| r - lambda * (r - j) * (r - j))
}

fn deviation_reward(mdp: &TabularMdp, j: f64) -> DMatrix<f64> {
    mdp.reward().map(|r| (r - j) * (r - j))
}

pub fn perf_stats_at(mdp: &TabularMdp, policy: &Policy, features: &[Vec<f64>], lambda: f64) -> Result<PerfStats> {
    perf_stats(mdp, &policy_table(mdp, policy, features)?, lambda)
}

fn gradient_of(mdp: &TabularMdp, policy: &Policy, features: &[Vec<f64>], reward: impl Fn(f64) -> DMatrix<f64>) -> Result<DVector<f64>> {
    let pi = policy_table(mdp, policy, features)?;
    let j = perf_stats(mdp, &pi, 0.0)?.j;
    let (q, _) = action_values(mdp, &pi, &reward(j))?;
    let d = occupancy(mdp, &pi)?.d_mu;
    Ok(weighted_score_sum(&d, &pi, &score_table(policy, features, &pi), &q, policy.dim()))
}

/// `∇J = Σ_s d(s) Σ_a π ∇log π Q`.
pub fn exact_gradient_j(mdp: &TabularMdp, policy: &Policy, features: &[Vec<f64>]) -> Result<DVector<f64>> {
    gradient_of(mdp, policy, features, |_| mdp.reward().clone())
}

/// `∇ν² = Σ_s d(s) Σ_a π ∇log π X`.
pub fn exact_gradient_nu2(mdp: &TabularMdp, policy: &Policy, features: &[Vec<f64>]) -> Result<DVector<f64>> {
    gradient_of(mdp, policy, features, |j| deviation_reward(mdp, j))
}

/// `∇η = Σ_s d(s) Σ_a π ∇log π Q^λ` with `Q^λ = Q − λX`.
pub fn exact_gradient_eta(mdp: &TabularMdp, policy: &Policy, features: &[Vec<f64>], lambda: f64) -> Result<DVector<f64>> {
    gradient_of(mdp, policy, features, |j| risk_reward(mdp, j, lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum HessianMethod {
    /// Differentiates the linear Bellman solves.
    #[default]
    Analytic,
    /// Central differences of the exact gradient.
    FiniteDifference { h: f64 },
}

/// Hessian of `η`, symmetrized.
///
/// With `r^λ = R − λ(R − J)²` and `J` frozen, `Hη = H G_{r^λ} + 2λ ∇J ∇Jᵀ`
/// where `H G_r = Σ_s d(s) Σ_a π [(ssᵀ + H log π) Q_r + s ∇Q_rᵀ + ∇Q_r sᵀ]`,
/// `s` the score and `∇Q_r(s,a) = γ Σ_{s'} P(s'|s,a) ∇V_r(s')`.
pub fn hessian_eta(mdp: &TabularMdp, policy: &Policy, features: &[Vec<f64>], lambda: f64, method: HessianMethod) -> Result<DMatrix<f64>> {
    match method {
        HessianMethod::Analytic => hessian_analytic(mdp, policy, features, lambda),
        HessianMethod::FiniteDifference { h } => hessian_eta_fd(mdp, policy, features, lambda, h),
    }
}

fn hessian_analytic(mdp: &TabularMdp, policy: &Policy, features: &[Vec<f64>], lambda: f64) -> Result<DMatrix<f64>> {
    let pi = policy_table(mdp, policy, features)?;
    let m = policy.dim();
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    let g = mdp.gamma();
    let j = perf_stats(mdp, &pi, 0.0)?.j;
    let d = occupancy(mdp, &pi)?.d_mu;
    let scores = score_table(policy, features, &pi);
    let (q, _) = action_values(mdp, &pi, &risk_reward(mdp, j, lambda))?;

    let mut b = DMatrix::zeros(n_s, m);
    for s in 0..n_s {
        for a in 0..n_a {
            let w = pi[(s, a)] * q[(s, a)];
            for k in 0..m {
                b[(s, k)] += w * scores[s][a][k];
            }
        }
    }
    let grad_v = solve_discounted(&policy_transition(mdp, &pi), g, &b)?;

    let mut h = DMatrix::zeros(m, m);
    for s in 0..n_s {
        if d[s] == 0.0 {
            continue;
        }
        let p: Vec<f64> = pi.row(s).iter().copied().collect();
        let info = policy.softmax_information(&features[s], &p);
        for a in 0..n_a {
            let w = d[s] * pi[(s, a)];
            if w == 0.0 {
                continue;
            }
            let mut grad_q = DVector::zeros(m);
            for (next, &pn) in mdp.next_distribution(s, a).iter().enumerate() {
                if pn != 0.0 {
                    grad_q += grad_v.row(next).transpose() * (g * pn);
                }
            }
            let sc = &scores[s][a];
            h += (sc * sc.transpose() - &info) * (w * q[(s, a)]);
            h += (sc * grad_q.transpose() + &grad_q * sc.transpose()) * w;
        }
    }
    let grad_j = exact_gradient_j(mdp, policy, features)?;
    h += &grad_j * grad_j.transpose() * (2.0 * lambda);
    Ok(symmetric_part(&h))
}

/// Central differences of [`exact_gradient_eta`], symmetrized.
pub fn hessian_eta_fd(mdp: &TabularMdp, policy: &Policy, features: &[Vec<f64>], lambda: f64, h: f64) -> Result<DMatrix<f64>> {
    ensure!(h > 0.0, "finite-difference step must be positive");
    let m = policy.dim();
    let theta = policy.theta().clone();
    let mut out = DMatrix::zeros(m, m);
    for i in 0..m {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[i] += h;
        minus[i] -= h;
        let gp = exact_gradient_eta(mdp, &policy.clone().with_theta(plus)?, features, lambda)?;
        let gm = exact_gradient_eta(mdp, &policy.clone().with_theta(minus)?, features, lambda)?;
        out.set_column(i, &((gp - gm) / (2.0 * h)));
    }
    Ok(symmetric_part(&out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::build_random_tabular;
    use rand::{Rng, SeedableRng};

    fn setup(seed: u64, s: usize, a: usize, gamma: f64) -> (TabularMdp, Policy, Vec<Vec<f64>>) {
        let mdp = build_random_tabular(seed, s, a, gamma, 1.0).unwrap();
        let mut rng = crate::env::SimRng::seed_from_u64(seed + 100);
        let theta = DVector::from_fn(s * a, |_, _| rng.random_range(-1.0..1.0));
        let policy = Policy::softmax(a, s).unwrap().with_theta(theta).unwrap();
        (mdp, policy, one_hot_features(s))
    }

    fn fd_eta(mdp: &TabularMdp, policy: &Policy, f: &[Vec<f64>], lambda: f64, h: f64) -> DVector<f64> {
        let th = policy.theta().clone();
        DVector::from_fn(th.len(), |i, _| {
            let mut p = th.clone();
            let mut m = th.clone();
            p[i] += h;
            m[i] -= h;
            let ep = perf_stats_at(mdp, &policy.clone().with_theta(p).unwrap(), f, lambda).unwrap().eta;
            let em = perf_stats_at(mdp, &policy.clone().with_theta(m).unwrap(), f, lambda).unwrap().eta;
            (ep - em) / (2.0 * h)
        })
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (mdp, policy, f) = setup(11, 5, 3, 0.9);
        for lambda in [0.0, 0.8] {
            let g = exact_gradient_eta(&mdp, &policy, &f, lambda).unwrap();
            let fd = fd_eta(&mdp, &policy, &f, lambda, 1e-5);
            assert!((&g - &fd).norm() <= 1e-5 * g.norm(), "lambda={lambda}");
        }
        let g0 = exact_gradient_eta(&mdp, &policy, &f, 0.0).unwrap();
        assert!((g0 - exact_gradient_j(&mdp, &policy, &f).unwrap()).amax() < 1e-14);
    }

    #[test]
    fn gradient_is_linear_in_lambda() {
        let (mdp, policy, f) = setup(12, 4, 2, 0.8);
        let gj = exact_gradient_j(&mdp, &policy, &f).unwrap();
        let gv = exact_gradient_nu2(&mdp, &policy, &f).unwrap();
        let g = exact_gradient_eta(&mdp, &policy, &f, 1.7).unwrap();
        assert!((g - (gj - gv * 1.7)).amax() < 1e-12);
    }

    #[test]
    fn analytic_hessian_matches_finite_differences() {
        let (mdp, policy, f) = setup(13, 4, 3, 0.9);
        for lambda in [0.0, 0.6] {
            let h = hessian_eta(&mdp, &policy, &f, lambda, HessianMethod::Analytic).unwrap();
            let fd = hessian_eta(&mdp, &policy, &f, lambda, HessianMethod::FiniteDifference { h: 1e-5 }).unwrap();
            assert!((&h - h.transpose()).amax() < 1e-12);
            assert!((&h - &fd).amax() < 1e-6 * h.amax().max(1.0), "lambda={lambda}: {}", (&h - &fd).amax());
        }
    }

    #[test]
    fn rejects_gaussian_and_bad_features() {
        let (mdp, policy, f) = setup(14, 3, 2, 0.5);
        let g = Policy::gaussian(3, 1.0).unwrap();
        assert!(exact_gradient_eta(&mdp, &g, &f, 0.1).is_err());
        assert!(exact_gradient_eta(&mdp, &policy, &f[..2], 0.1).is_err());
    }
}
