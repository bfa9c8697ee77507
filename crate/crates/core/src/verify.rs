//! Numerical checks of the exact identities and bounds over a corpus of
//! random tabular MDPs.
//!
//! Each suite reports the largest violation over its instances; a suite
//! passes when that value does not exceed its tolerance. Violations of the
//! trust-region bound are also serialized for inspection.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::env::{build_random_tabular, SimRng, TabularMdp};
use crate::error::{ensure, Result};
use crate::exact::{
    action_values, check_policy_table, exact_gradient_eta, hessian_eta, one_hot_features, occupancy, perf_difference,
    perf_stats, perf_stats_at, solve_recursion, surrogate_and_bound, value_tables, HessianMethod,
};
use crate::gradients::finite_diff_grad;
use crate::numerics::spectral_norm_general;
use crate::optim::{check_exp_utility_approx, safe_meta_params, safe_vola_pg_exact, TrainConfig};
use crate::parallel::{map_slice, Execution};
use crate::policy::Policy;
use crate::sampling::trajectory_seed;

pub const CORPUS_GAMMAS: [f64; 3] = [0.5, 0.9, 0.99];
pub const REPORT_COLUMNS: [&str; 5] = ["theorem_id", "instances", "max_violation", "tolerance", "pass"];

/// Corpus member `seed`: 2 to 20 states, 2 to 4 actions, `γ` cycling through
/// [`CORPUS_GAMMAS`], rewards in `[−1, 1]`.
pub fn corpus_mdp(seed: u64) -> Result<TabularMdp> {
    let h = trajectory_seed(seed, 0xC0);
    let n_states = 2 + (h % 19) as usize;
    let n_actions = 2 + ((h >> 16) % 3) as usize;
    build_random_tabular(seed, n_states, n_actions, CORPUS_GAMMAS[(seed % 3) as usize], 1.0)
}

/// Softmax policy over one-hot states with standard-normal parameters.
pub fn random_policy(mdp: &TabularMdp, seed: u64) -> Result<Policy> {
    let mut rng = SimRng::seed_from_u64(seed);
    let m = mdp.n_states() * mdp.n_actions();
    let theta = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    Policy::softmax(mdp.n_actions(), mdp.n_states())?.with_theta(theta)
}

/// A perturbation of `policy` whose maximal state KL equals `target`.
pub fn nearby_policy(policy: &Policy, features: &[Vec<f64>], target: f64, seed: u64) -> Result<Policy> {
    ensure!(target > 0.0, "KL target must be positive");
    let mut rng = SimRng::seed_from_u64(seed);
    let dir = DVector::from_fn(policy.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let at = |t: f64| policy.clone().with_theta(policy.theta() + &dir * t);
    let kl = |t: f64| -> Result<f64> { policy.kl_max(&at(t)?, features) };
    let mut hi = 1e-3;
    while kl(hi)? < target {
        hi *= 2.0;
        ensure!(hi < 1e6, "cannot reach KL {target} along the sampled direction");
    }
    let mut lo = 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if kl(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyRow {
    pub theorem_id: &'static str,
    pub instances: usize,
    pub max_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
    /// One line per trust-region bound violation.
    pub offending: Vec<String>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn row(&self, id: &str) -> Option<&VerifyRow> {
        self.rows.iter().find(|r| r.theorem_id == id)
    }

    pub fn to_csv(&self) -> String {
        let mut out = REPORT_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:e},{:e},{}", r.theorem_id, r.instances, r.max_violation, r.tolerance, r.pass);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub seeds: Vec<u64>,
    /// Nearby policy pairs per MDP for the trust-region and
    /// performance-difference suites.
    pub pairs_per_mdp: usize,
    /// Safe ascent steps per MDP.
    pub safe_steps: usize,
    pub exec: Execution,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { seeds: (0..50).collect(), pairs_per_mdp: 2, safe_steps: 5, exec: Execution::Parallel }
    }
}

/// `(id, tolerance)` for every suite, in report order.
const SUITES: [(&str, f64); 16] = [
    ("return_variance_bound", 1e-9),
    ("volatility_moment_identity", 1e-12),
    ("volatility_value_identity", 1e-10),
    ("occupancy_normalization", 1e-10),
    ("occupancy_recursion", 1e-10),
    ("bellman_residual", 1e-10),
    ("score_identity", 1e-10),
    ("performance_difference", 1e-8),
    ("first_order_improvement", 1e-12),
    ("trust_region_bound", 1e-10),
    ("trust_region_bound_max_advantage", 1e-10),
    ("gradient_finite_difference", 1e-5),
    ("hessian_finite_difference", 1e-4),
    ("hessian_norm_bound", 0.0),
    ("safe_exact_improvement", 1e-12),
    ("exp_utility_scaling", 0.0),
];

struct Instance {
    violations: [f64; SUITES.len()],
    /// Instances counted per suite (pairs count separately).
    counts: [usize; SUITES.len()],
    offending: Vec<String>,
}

fn idx(id: &str) -> usize {
    SUITES.iter().position(|(s, _)| *s == id).expect("known suite")
}

fn theta_string(p: &Policy) -> String {
    p.theta().iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ")
}

fn check_instance(seed: u64, config: &VerifyConfig) -> Result<Instance> {
    let mut inst = Instance { violations: [0.0; SUITES.len()], counts: [0; SUITES.len()], offending: Vec::new() };
    let put = |id: &str, v: f64, inst: &mut Instance| {
        let i = idx(id);
        inst.violations[i] = inst.violations[i].max(if v.is_nan() { f64::INFINITY } else { v });
        inst.counts[i] += 1;
    };
    let mdp = corpus_mdp(seed)?;
    let g = mdp.gamma();
    let n = mdp.n_states();
    let features = one_hot_features(n);
    let policy = random_policy(&mdp, trajectory_seed(seed, 1))?;
    let pi = policy.table(&features)?;
    check_policy_table(&mdp, &pi)?;
    let mut rng = SimRng::seed_from_u64(trajectory_seed(seed, 2));
    let lambda: f64 = rng.random_range(0.0..2.0);

    let stats = perf_stats(&mdp, &pi, lambda)?;
    put("return_variance_bound", (stats.sigma2 - stats.nu2 / ((1.0 - g) * (1.0 - g))).max(0.0), &mut inst);
    put("volatility_moment_identity", (stats.nu2 - (stats.m2 - stats.j * stats.j)).abs(), &mut inst);

    let tables = value_tables(&mdp, &pi, lambda)?;
    put("volatility_value_identity", (stats.nu2 - (1.0 - g) * mdp.mu().dot(&tables.w)).abs(), &mut inst);

    let occ = occupancy(&mdp, &pi)?;
    let neg = occ.d_mu.iter().fold(0.0_f64, |acc, &d| acc.max(-d));
    put("occupancy_normalization", (occ.d_mu.sum() - 1.0).abs().max(neg), &mut inst);

    let gvec = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let rec = solve_recursion(&mdp, &pi, &gvec)?;
    put("occupancy_recursion", (&rec.f - &rec.f_occupancy).amax(), &mut inst);

    let (q, v) = action_values(&mdp, &pi, mdp.reward())?;
    let mut residual = 0.0_f64;
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let next: f64 = mdp.next_distribution(s, a).iter().zip(v.iter()).map(|(p, x)| p * x).sum();
            residual = residual.max((q[(s, a)] - mdp.r(s, a) - g * next).abs());
        }
        residual = residual.max((v[s] - pi.row(s).dot(&q.row(s))).abs());
    }
    put("bellman_residual", residual, &mut inst);

    let mut score_err = 0.0_f64;
    for phi in &features {
        let p = policy.probabilities(phi)?;
        let mut acc = DVector::zeros(policy.dim());
        for (a, pa) in p.iter().enumerate() {
            acc.axpy(*pa, &policy.score(phi, crate::env::Action::Discrete(a))?, 1.0);
        }
        score_err = score_err.max(acc.amax());
    }
    put("score_identity", score_err, &mut inst);

    for k in 0..config.pairs_per_mdp {
        let pair_seed = trajectory_seed(seed, 100 + k as u64);
        let u: f64 = rng.random_range(0.0..1.0);
        let target = 10f64.powf(-4.0 + 3.0 * u);
        let other = nearby_policy(&policy, &features, target, pair_seed)?;
        let pi_t = other.table(&features)?;
        let pd = perf_difference(&mdp, &pi, &pi_t, lambda)?;
        put("performance_difference", (pd.lhs - pd.rhs).abs(), &mut inst);
        put("first_order_improvement", (pd.first_order - pd.lhs).max(0.0), &mut inst);
        let sb = surrogate_and_bound(&mdp, &pi, &pi_t, lambda)?;
        put("trust_region_bound", sb.violation(), &mut inst);
        put("trust_region_bound_max_advantage", sb.violation_max(), &mut inst);
        if sb.violation() > SUITES[idx("trust_region_bound")].1 {
            inst.offending.push(format!(
                "seed={seed} pair={k} lambda={lambda:e} gamma={g} kl_max={:e} eta_tilde={:e} bound={:e} \
                 violation={:e} epsilon={:e} theta=[{}] theta_tilde=[{}]",
                sb.kl_max,
                sb.eta_tilde,
                sb.bound_rhs,
                sb.violation(),
                sb.epsilon,
                theta_string(&policy),
                theta_string(&other)
            ));
        }
    }

    let grad = exact_gradient_eta(&mdp, &policy, &features, lambda)?;
    let eta_at = |theta: &DVector<f64>| {
        policy
            .clone()
            .with_theta(theta.clone())
            .and_then(|p| perf_stats_at(&mdp, &p, &features, lambda))
            .map_or(f64::NAN, |s| s.eta)
    };
    let fd = finite_diff_grad(eta_at, policy.theta(), 1e-5)?;
    put("gradient_finite_difference", (&grad - &fd).amax() / grad.amax().max(1e-8), &mut inst);

    let hess = hessian_eta(&mdp, &policy, &features, lambda, HessianMethod::Analytic)?;
    let hess_fd = hessian_eta(&mdp, &policy, &features, lambda, HessianMethod::FiniteDifference { h: 1e-5 })?;
    put("hessian_finite_difference", (&hess - &hess_fd).amax() / hess.amax().max(1e-8), &mut inst);

    let smoothing = policy.smoothing_constants(&features, 1.0)?;
    let samples = vec![grad.clone(); policy.dim() + 1];
    let params = safe_meta_params(&samples, smoothing, mdp.r_max(), g, lambda, stats.j, 0.1)?;
    put("hessian_norm_bound", (spectral_norm_general(&hess) - params.l_bound).max(0.0), &mut inst);

    if config.safe_steps > 0 {
        let tc = TrainConfig { gamma: g, lambda, iterations: config.safe_steps, ..Default::default() };
        let (_, log) = safe_vola_pg_exact(&mdp, &policy, &tc)?;
        for s in &log.safe_steps {
            let gain = s.eta_after.unwrap_or(f64::NAN) - s.eta_before.unwrap_or(f64::NAN);
            put("safe_exact_improvement", s.guaranteed - gain, &mut inst);
        }
    }

    let gaps = check_exp_utility_approx(&mdp, &pi, &[0.01, 0.005])?;
    let ratio = gaps[0].gap / gaps[1].gap;
    put("exp_utility_scaling", (2.5 - ratio).max(ratio - 8.0).max(0.0), &mut inst);
    Ok(inst)
}

/// Runs every suite over `config.seeds`.
pub fn verify_corpus(config: &VerifyConfig) -> Result<VerifyReport> {
    ensure!(!config.seeds.is_empty(), "verification corpus is empty");
    let results = map_slice(&config.seeds, config.exec, |&seed| check_instance(seed, config));
    let mut violations = [0.0_f64; SUITES.len()];
    let mut counts = [0usize; SUITES.len()];
    let mut offending = Vec::new();
    for r in results {
        let inst = r?;
        for i in 0..SUITES.len() {
            violations[i] = violations[i].max(inst.violations[i]);
            counts[i] += inst.counts[i];
        }
        offending.extend(inst.offending);
    }
    let rows = SUITES
        .iter()
        .enumerate()
        .map(|(i, &(id, tol))| VerifyRow {
            theorem_id: id,
            instances: counts[i],
            max_violation: violations[i],
            tolerance: tol,
            pass: violations[i] <= tol,
        })
        .collect();
    Ok(VerifyReport { rows, offending })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_respects_size_limits() {
        for seed in 0..60 {
            let mdp = corpus_mdp(seed).unwrap();
            assert!((2..=20).contains(&mdp.n_states()));
            assert!((2..=4).contains(&mdp.n_actions()));
            assert_eq!(mdp.gamma(), CORPUS_GAMMAS[(seed % 3) as usize]);
        }
    }

    #[test]
    fn nearby_policy_hits_the_kl_target() {
        let mdp = corpus_mdp(4).unwrap();
        let f = one_hot_features(mdp.n_states());
        let p = random_policy(&mdp, 9).unwrap();
        for target in [1e-4, 1e-2, 0.1] {
            let q = nearby_policy(&p, &f, target, 3).unwrap();
            assert!((p.kl_max(&q, &f).unwrap() - target).abs() < 1e-9 * target.max(1.0));
        }
    }

    #[test]
    fn small_corpus_report_has_every_suite() {
        let config = VerifyConfig { seeds: vec![0, 1, 2], pairs_per_mdp: 1, safe_steps: 2, exec: Execution::Parallel };
        let report = verify_corpus(&config).unwrap();
        assert_eq!(report.rows.len(), SUITES.len());
        assert!(report.to_csv().starts_with("theorem_id,instances,max_violation,tolerance,pass\n"));
        for id in ["return_variance_bound", "performance_difference", "gradient_finite_difference"] {
            assert!(report.row(id).unwrap().pass, "{:?}", report.row(id));
        }
    }
}
