//! Training loops: VOLA-PG, TRVO (trust-region and penalty forms), TRPO-exp,
//! a mean-variance baseline and safe VOLA-PG with adaptive step and batch
//! sizes.

mod exp_utility;
mod mean_variance;
mod safe;
mod trust_region;
mod vola_pg;

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DVector;

use crate::env::Environment;
use crate::error::{ensure, Error, Result};
use crate::gradients::{grad_eta_gpomdp, grad_eta_pgt, GradEstimate, GradForm, Normalization};
use crate::parallel::Execution;
use crate::policy::Policy;
use crate::sampling::{batch_stats, collect, estimate_j, trajectory_seed, Batch};

pub use exp_utility::{check_exp_utility_approx, exp_utility_transform, ExpUtilityGap};
pub use mean_variance::mean_variance_pg;
pub use safe::{c_bound, safe_meta_params, safe_vola_pg, safe_vola_pg_exact, SafeMetaParams, SafeStep};
pub use trust_region::{conjugate_gradient, trpo_exp, trvo, CgResult};
pub use vola_pg::vola_pg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Algorithm {
    #[default]
    VolaPg,
    Trvo,
    TrpoExp,
    MeanVariance,
    SafeVolaPg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::VolaPg, Algorithm::Trvo, Algorithm::TrpoExp, Algorithm::MeanVariance, Algorithm::SafeVolaPg];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::VolaPg => "vola-pg",
            Algorithm::Trvo => "trvo",
            Algorithm::TrpoExp => "trpo-exp",
            Algorithm::MeanVariance => "mean-variance",
            Algorithm::SafeVolaPg => "safe-vola-pg",
        }
    }

    /// Grid points of a sweep set `c` for TRPO-exp and `λ` otherwise.
    pub fn sweeps_c(self) -> bool {
        self == Algorithm::TrpoExp
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown algorithm '{s}'")))
    }
}

/// Runs `algorithm` from `policy0`.
pub fn train<E: Environment>(algorithm: Algorithm, env: &E, policy0: &Policy, config: &TrainConfig) -> Result<(Policy, TrainLog)> {
    match algorithm {
        Algorithm::VolaPg => vola_pg(env, policy0, config),
        Algorithm::Trvo => trvo(env, policy0, config),
        Algorithm::TrpoExp => trpo_exp(env, policy0, config),
        Algorithm::MeanVariance => mean_variance_pg(env, policy0, config),
        Algorithm::SafeVolaPg => safe_vola_pg(env, policy0, config),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrustRegion {
    /// Mean sampled KL bounded by `radius`, solved with CG and backtracking.
    KlConstraint { radius: f64 },
    /// Exact penalized surrogate on tabular MDPs.
    Penalty,
}

/// How `Ĵ` inside the transformed reward is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JSampling {
    /// From the gradient batch itself.
    #[default]
    Single,
    /// From a separate batch of the same size.
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub batch: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub trust_region: TrustRegion,
    /// When set, the KL radius shrinks geometrically from its initial value
    /// to this one over the run.
    pub kl_radius_final: Option<f64>,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub backtrack_coef: f64,
    pub backtrack_steps: usize,
    pub c: f64,
    pub seed: u64,
    pub estimator: GradForm,
    pub normalization: Normalization,
    pub j_sampling: JSampling,
    /// Upper limit on the batch size safe VOLA-PG may request.
    pub max_batch: usize,
    pub smoothing_safety: f64,
    pub delta: f64,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            gamma: 0.99,
            horizon: 50,
            batch: 100,
            iterations: 100,
            alpha: 0.01,
            trust_region: TrustRegion::KlConstraint { radius: 0.01 },
            kl_radius_final: None,
            cg_iters: 10,
            cg_damping: 1e-3,
            backtrack_coef: 0.8,
            backtrack_steps: 10,
            c: 0.01,
            seed: 0,
            estimator: GradForm::Gpomdp { baseline: true },
            normalization: Normalization::AsPrinted,
            j_sampling: JSampling::Single,
            max_batch: 100_000,
            smoothing_safety: 1.0,
            delta: 0.1,
            exec: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    /// KL radius for iteration `iter` of a run starting at `radius`.
    pub fn kl_radius_at(&self, radius: f64, iter: usize) -> f64 {
        match self.kl_radius_final {
            Some(last) if radius > 0.0 && self.iterations > 1 => {
                let frac = iter as f64 / (self.iterations - 1) as f64;
                radius * (last / radius).powf(frac)
            }
            _ => radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda, self.gamma, self.alpha, self.cg_damping, self.backtrack_coef, self.c, self.delta];
        ensure!(finite.iter().all(|x| x.is_finite()), "configuration contains a non-finite value");
        ensure!(self.lambda >= 0.0, "lambda must be non-negative, got {}", self.lambda);
        ensure!(self.gamma > 0.0 && self.gamma < 1.0, "gamma must lie in (0, 1), got {}", self.gamma);
        ensure!(self.horizon >= 1, "horizon must be at least 1");
        ensure!(self.batch >= 1, "batch must be at least 1");
        ensure!(self.alpha >= 0.0, "alpha must be non-negative, got {}", self.alpha);
        if let TrustRegion::KlConstraint { radius } = self.trust_region {
            ensure!(radius.is_finite() && radius >= 0.0, "kl_radius must be non-negative, got {radius}");
        }
        if let Some(r) = self.kl_radius_final {
            ensure!(r.is_finite() && r > 0.0, "kl_radius_final must be positive, got {r}");
        }
        ensure!(self.cg_iters >= 1, "cg_iters must be at least 1");
        ensure!(self.cg_damping >= 0.0, "cg_damping must be non-negative");
        ensure!(
            self.backtrack_coef > 0.0 && self.backtrack_coef < 1.0,
            "backtrack_coef must lie in (0, 1), got {}",
            self.backtrack_coef
        );
        ensure!(self.c > 0.0, "c must be positive, got {}", self.c);
        ensure!(self.delta > 0.0 && self.delta < 1.0, "delta must lie in (0, 1), got {}", self.delta);
        ensure!(self.max_batch >= self.batch, "max_batch must be at least batch");
        ensure!(self.smoothing_safety >= 1.0, "smoothing_safety must be at least 1");
        Ok(())
    }

    /// Master seed of iteration `iter`; `stream` separates independent
    /// batches drawn in the same iteration.
    pub(crate) fn iteration_seed(&self, iter: usize, stream: u64) -> u64 {
        trajectory_seed(trajectory_seed(self.seed, iter as u64), stream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub iter: usize,
    pub j_hat: f64,
    pub nu2_hat: f64,
    pub sigma2_hat: f64,
    pub eta_hat: f64,
    pub grad_norm: f64,
    pub kl_step: f64,
    pub accepted_step_size: f64,
    /// Seconds since the start of training.
    pub wall_time: f64,
}

pub const TRAIN_LOG_COLUMNS: [&str; 9] = [
    "iter",
    "j_hat",
    "nu2_hat",
    "sigma2_hat",
    "eta_hat",
    "grad_norm",
    "kl_step",
    "accepted_step_size",
    "wall_time",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    /// Fallbacks and early stops, one line each.
    pub notes: Vec<String>,
    /// Filled by safe VOLA-PG only.
    pub safe_steps: Vec<SafeStep>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = TRAIN_LOG_COLUMNS.join(",");
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.iter,
                r.j_hat,
                r.nu2_hat,
                r.sigma2_hat,
                r.eta_hat,
                r.grad_norm,
                r.kl_step,
                r.accepted_step_size,
                r.wall_time
            );
        }
        out
    }

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }

    fn note(&mut self, iter: usize, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("iteration {iter}: {msg}");
        self.notes.push(format!("iter {iter}: {msg}"));
    }
}

/// Per-iteration bookkeeping shared by every loop.
struct Recorder {
    start: Instant,
    log: TrainLog,
}

impl Recorder {
    fn new() -> Self {
        Self { start: Instant::now(), log: TrainLog::default() }
    }

    fn push_record(&mut self, mut record: TrainRecord) {
        record.wall_time = self.start.elapsed().as_secs_f64();
        self.log.records.push(record);
    }

    fn push(&mut self, iter: usize, batch: &Batch, lambda: f64, grad_norm: f64, kl_step: f64, step: f64) {
        let s = batch_stats(batch, lambda);
        self.log.records.push(TrainRecord {
            iter,
            j_hat: s.j,
            nu2_hat: s.nu2,
            sigma2_hat: s.sigma2,
            eta_hat: s.eta,
            grad_norm,
            kl_step,
            accepted_step_size: step,
            wall_time: self.start.elapsed().as_secs_f64(),
        });
    }
}

fn check_compat<E: Environment>(env: &E, policy: &Policy) -> Result<()> {
    ensure!(
        policy.feature_dim() == env.feature_dim(),
        "policy expects {} features, environment provides {}",
        policy.feature_dim(),
        env.feature_dim()
    );
    if policy.is_softmax() {
        ensure!(
            policy.n_actions() == env.action_count(),
            "policy has {} actions, environment has {}",
            policy.n_actions(),
            env.action_count()
        );
    }
    Ok(())
}

/// `Ĵ` for the transformed reward, per `config.j_sampling`.
fn j_for_gradient<E: Environment>(env: &E, policy: &Policy, config: &TrainConfig, batch: &Batch, iter: usize) -> Result<f64> {
    Ok(match config.j_sampling {
        JSampling::Single => estimate_j(batch),
        JSampling::Independent => {
            let other = collect(env, policy, batch.len(), config.horizon, config.gamma, config.iteration_seed(iter, 1), config.exec)?;
            estimate_j(&other)
        }
    })
}

fn estimate_gradient(config: &TrainConfig, batch: &Batch, policy: &Policy, j_hat: f64) -> Result<GradEstimate> {
    match config.estimator {
        GradForm::Pgt => grad_eta_pgt(batch, policy, config.lambda, j_hat, config.normalization, config.exec),
        GradForm::Gpomdp { baseline } => {
            grad_eta_gpomdp(batch, policy, config.lambda, j_hat, config.normalization, baseline, config.exec)
        }
    }
}

fn check_finite(v: &DVector<f64>, what: &str, iter: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(format!("{what} is not finite at iteration {iter}")))
    }
}
