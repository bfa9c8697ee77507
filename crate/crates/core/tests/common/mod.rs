//! Reference computations for integration tests. Everything here is done by
//! plain fixed-point iteration and explicit sums, never through the crate's
//! linear solvers, so agreement is evidence rather than tautology.
#![allow(dead_code)]

use nalgebra::DMatrix;
use riskvol::env::TabularMdp;
use riskvol::exact::one_hot_features;
use riskvol::policy::Policy;

/// Iterations until `γ^t` drops below `1e-18`.
fn sweeps(gamma: f64) -> usize {
    ((1e-18f64).ln() / gamma.ln()).ceil() as usize + 1
}

/// `(1−γ) Σ_t γ^t μ P_π^t`, summed term by term.
pub fn occupancy(mdp: &TabularMdp, pi: &DMatrix<f64>) -> Vec<f64> {
    let (n, m, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut p: Vec<f64> = mdp.mu().iter().copied().collect();
    let mut d = vec![0.0; n];
    let mut disc = 1.0 - g;
    for _ in 0..sweeps(g) {
        let mut next = vec![0.0; n];
        for s in 0..n {
            d[s] += disc * p[s];
            for a in 0..m {
                let w = p[s] * pi[(s, a)];
                if w == 0.0 {
                    continue;
                }
                for (s2, q) in next.iter_mut().enumerate() {
                    *q += w * mdp.p(s, a, s2);
                }
            }
        }
        p = next;
        disc *= g;
    }
    d
}

#[derive(Debug, Clone, Copy)]
pub struct Stats {
    pub j: f64,
    pub nu2: f64,
    pub m2: f64,
    /// Variance of the unnormalized discounted return.
    pub sigma2: f64,
}

impl Stats {
    pub fn eta(&self, lambda: f64) -> f64 {
        self.j - lambda * self.nu2
    }
}

pub fn stats(mdp: &TabularMdp, pi: &DMatrix<f64>) -> Stats {
    let (j, nu2, m2) = moments(mdp, pi);
    Stats { j, nu2, m2, sigma2: return_variance(mdp, pi) }
}

/// `(J, ν², M)` as occupancy-weighted sums.
pub fn moments(mdp: &TabularMdp, pi: &DMatrix<f64>) -> (f64, f64, f64) {
    let d = occupancy(mdp, pi);
    let mean = |f: &dyn Fn(f64) -> f64| -> f64 {
        (0..mdp.n_states())
            .map(|s| (0..mdp.n_actions()).map(|a| d[s] * pi[(s, a)] * f(mdp.r(s, a))).sum::<f64>())
            .sum()
    };
    let j = mean(&|r| r);
    (j, mean(&|r| (r - j) * (r - j)), mean(&|r| r * r))
}

/// Variance of `G = Σ γ^t R_t` from value iteration on its first two moments.
pub fn return_variance(mdp: &TabularMdp, pi: &DMatrix<f64>) -> f64 {
    let (n, m, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; n];
    for _ in 0..sweeps(g) {
        let mut v2 = vec![0.0; n];
        let mut w2 = vec![0.0; n];
        for s in 0..n {
            for a in 0..m {
                let (pv, pw) = (0..n).fold((0.0, 0.0), |(x, y), s2| {
                    let p = mdp.p(s, a, s2);
                    (x + p * v[s2], y + p * w[s2])
                });
                let r = mdp.r(s, a);
                v2[s] += pi[(s, a)] * (r + g * pv);
                w2[s] += pi[(s, a)] * (r * r + 2.0 * g * r * pv + g * g * pw);
            }
        }
        v = v2;
        w = w2;
    }
    let mean: f64 = mdp.mu().iter().zip(&v).map(|(m, x)| m * x).sum();
    let second: f64 = mdp.mu().iter().zip(&w).map(|(m, x)| m * x).sum();
    second - mean * mean
}

/// `−(1/c) log Σ_s d(s) Σ_a π(a|s) e^{−c R(s,a)}`.
pub fn exp_utility(mdp: &TabularMdp, pi: &DMatrix<f64>, c: f64) -> f64 {
    let d = occupancy(mdp, pi);
    let z: f64 = (0..mdp.n_states())
        .map(|s| (0..mdp.n_actions()).map(|a| d[s] * pi[(s, a)] * (-c * mdp.r(s, a)).exp()).sum::<f64>())
        .sum();
    -z.ln() / c
}

/// `J_T`, `ν²_T` over a finite horizon with `k = (1−γ)/(1−γ^T)`, the targets
/// of the sampled estimators.
pub fn truncated(mdp: &TabularMdp, pi: &DMatrix<f64>, horizon: usize) -> (f64, f64) {
    let (n, m, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let k = (1.0 - g) / (1.0 - g.powi(horizon as i32));
    let mut p: Vec<f64> = mdp.mu().iter().copied().collect();
    let mut d = vec![0.0; n];
    let mut disc = k;
    for _ in 0..horizon {
        let mut next = vec![0.0; n];
        for s in 0..n {
            d[s] += disc * p[s];
            for a in 0..m {
                for (s2, q) in next.iter_mut().enumerate() {
                    *q += p[s] * pi[(s, a)] * mdp.p(s, a, s2);
                }
            }
        }
        p = next;
        disc *= g;
    }
    let mean = |f: &dyn Fn(f64) -> f64| -> f64 {
        (0..n).map(|s| (0..m).map(|a| d[s] * pi[(s, a)] * f(mdp.r(s, a))).sum::<f64>()).sum()
    };
    let j = mean(&|r| r);
    (j, mean(&|r| (r - j) * (r - j)))
}

/// `η` of a softmax policy over one-hot states.
pub fn eta_of(mdp: &TabularMdp, policy: &Policy, lambda: f64) -> f64 {
    let pi = policy.table(&one_hot_features(mdp.n_states())).unwrap();
    let (j, nu2, _) = moments(mdp, &pi);
    j - lambda * nu2
}

/// Central differences of `f` at `theta`.
pub fn central_diff(f: impl Fn(&nalgebra::DVector<f64>) -> f64, theta: &nalgebra::DVector<f64>, h: f64) -> nalgebra::DVector<f64> {
    let mut out = nalgebra::DVector::zeros(theta.len());
    for i in 0..theta.len() {
        let mut up = theta.clone();
        let mut down = theta.clone();
        up[i] += h;
        down[i] -= h;
        out[i] = (f(&up) - f(&down)) / (2.0 * h);
    }
    out
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
