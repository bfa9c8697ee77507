//! Risk-aversion sweeps: one training run per grid value, each evaluated on
//! the same evaluation stream.

use std::fmt::Write as _;

use crate::env::Environment;
use crate::error::{ensure, Result};
use crate::optim::{train, Algorithm, TrainConfig};
use crate::parallel::{map_slice, Execution};
use crate::policy::Policy;
use crate::sampling::{collect, estimate_j, estimate_sigma, Batch};

pub const FRONTIER_COLUMNS: [&str; 7] = ["lambda_or_c", "j_hat", "nu2_hat", "sigma2_hat", "eta_hat", "iterations", "seed"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierRow {
    pub lambda_or_c: f64,
    pub j_hat: f64,
    pub nu2_hat: f64,
    pub sigma2_hat: f64,
    pub eta_hat: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Standard errors of `j_hat` and `nu2_hat` over evaluation trajectories.
    pub j_se: f64,
    pub nu2_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub grid: Vec<f64>,
    pub eval_batch: usize,
    pub eval_seed: u64,
    /// Parallelism across grid points.
    pub exec: Execution,
}

/// Per-trajectory normalized sums `k Σ γ^t f(R_t)`, their mean and standard
/// error.
fn mean_and_se(batch: &Batch, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let k = batch.norm();
    let xs: Vec<f64> = batch
        .trajectories
        .iter()
        .map(|t| {
            let mut disc = 1.0;
            let mut acc = 0.0;
            for &r in &t.rewards {
                acc += disc * f(r);
                disc *= batch.gamma;
            }
            k * acc
        })
        .collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Summary of `policy` on `eval_batch` trajectories drawn from `eval_seed`.
pub fn evaluate<E: Environment>(
    env: &E,
    policy: &Policy,
    config: &TrainConfig,
    eval_batch: usize,
    eval_seed: u64,
) -> Result<(Batch, f64, f64, f64, f64)> {
    let batch = collect(env, policy, eval_batch, config.horizon, config.gamma, eval_seed, config.exec)?;
    let j = estimate_j(&batch);
    let (_, j_se) = mean_and_se(&batch, |r| r);
    let (nu2, nu2_se) = mean_and_se(&batch, |r| (r - j) * (r - j));
    Ok((batch, j, j_se, nu2, nu2_se))
}

/// Trains once per grid value and evaluates each final policy with common
/// random numbers. The grid value sets `c` for TRPO-exp (with `η` reported
/// at `λ = c/2`) and `λ` for every other algorithm.
pub fn sweep<E: Environment>(
    env: &E,
    policy0: &Policy,
    algorithm: Algorithm,
    base: &TrainConfig,
    spec: &SweepSpec,
) -> Result<Vec<FrontierRow>> {
    ensure!(!spec.grid.is_empty(), "sweep grid is empty");
    ensure!(spec.eval_batch >= 2, "evaluation batch must hold at least 2 trajectories");
    let rows = map_slice(&spec.grid, spec.exec, |&value| -> Result<FrontierRow> {
        let mut config = base.clone();
        let lambda = if algorithm.sweeps_c() {
            config.c = value;
            0.5 * value
        } else {
            config.lambda = value;
            value
        };
        let (policy, log) = train(algorithm, env, policy0, &config)?;
        let (batch, j, j_se, nu2, nu2_se) = evaluate(env, &policy, &config, spec.eval_batch, spec.eval_seed)?;
        Ok(FrontierRow {
            lambda_or_c: value,
            j_hat: j,
            nu2_hat: nu2,
            sigma2_hat: estimate_sigma(&batch)?,
            eta_hat: j - lambda * nu2,
            iterations: log.records.len(),
            seed: config.seed,
            j_se,
            nu2_se,
        })
    });
    rows.into_iter().collect()
}

pub fn frontier_csv(rows: &[FrontierRow]) -> String {
    let mut out = FRONTIER_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.lambda_or_c, r.j_hat, r.nu2_hat, r.sigma2_hat, r.eta_hat, r.iterations, r.seed
        );
    }
    out
}

/// Indices `(i, j)` such that point `j` strictly dominates point `i`: higher
/// `Ĵ` and lower `ν̂²`.
pub fn dominated_pairs(rows: &[FrontierRow]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, a) in rows.iter().enumerate() {
        for (j, b) in rows.iter().enumerate() {
            if b.j_hat > a.j_hat && b.nu2_hat < a.nu2_hat {
                out.push((i, j));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{two_cycle_mdp, TabularEnv};

    fn row(l: f64, j: f64, v: f64) -> FrontierRow {
        FrontierRow {
            lambda_or_c: l,
            j_hat: j,
            nu2_hat: v,
            sigma2_hat: 0.0,
            eta_hat: 0.0,
            iterations: 1,
            seed: 0,
            j_se: 0.0,
            nu2_se: 0.0,
        }
    }

    #[test]
    fn domination_is_strict_in_both_coordinates() {
        let rows = [row(0.0, 1.0, 2.0), row(1.0, 0.5, 1.0), row(2.0, 0.5, 0.5), row(3.0, 1.0, 0.4)];
        assert_eq!(dominated_pairs(&rows), vec![(1, 3), (2, 3)]);
    }

    #[test]
    fn sweep_rows_follow_the_grid() {
        let env = TabularEnv::new(two_cycle_mdp(0.2, 0.9).unwrap(), 10).unwrap();
        let config = TrainConfig { gamma: 0.9, horizon: 10, batch: 10, iterations: 2, ..Default::default() };
        let spec = SweepSpec { grid: vec![0.0, 0.5], eval_batch: 20, eval_seed: 7, exec: Execution::Parallel };
        let rows = sweep(&env, &Policy::softmax(2, 5).unwrap(), Algorithm::VolaPg, &config, &spec).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].lambda_or_c, 0.5);
        assert!((rows[1].eta_hat - (rows[1].j_hat - 0.5 * rows[1].nu2_hat)).abs() < 1e-15);
        let csv = frontier_csv(&rows);
        assert!(csv.starts_with("lambda_or_c,j_hat,nu2_hat,sigma2_hat,eta_hat,iterations,seed\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
