//! Trajectory collection and the finite-horizon estimators.
//!
//! Every trajectory draws from its own ChaCha stream seeded by
//! [`trajectory_seed`]`(master, index)`, so a batch is bit-identical whatever
//! the thread count.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::SeedableRng;

use crate::env::{Action, Environment, SimRng};
use crate::error::{ensure, Error, Result};
use crate::numerics::NeumaierSum;
use crate::parallel::{map_indices, Execution};
use crate::policy::Policy;

/// `(1−γ)/(1−γ^T)`, the normalization that makes truncated discounted sums
/// of a constant reward equal to that constant.
pub fn horizon_norm(gamma: f64, horizon: usize) -> f64 {
    if gamma == 0.0 {
        1.0
    } else {
        (1.0 - gamma) / (1.0 - gamma.powi(horizon as i32))
    }
}

/// SplitMix64 finalizer over `(master, index)`.
pub fn trajectory_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One episode. `features` and `actions` cover the steps actually taken;
/// `rewards` always has the batch horizon, padded with zeros after an early
/// termination.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub features: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// Tabular state indices, when the environment exposes them.
    pub states: Option<Vec<usize>>,
    pub seed: u64,
    pub padded: bool,
}

impl Trajectory {
    /// Number of steps actually taken.
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn horizon(&self) -> usize {
        self.rewards.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub trajectories: Vec<Trajectory>,
    pub gamma: f64,
    pub horizon: usize,
}

impl Batch {
    pub fn new(trajectories: Vec<Trajectory>, gamma: f64, horizon: usize) -> Result<Self> {
        ensure!(!trajectories.is_empty(), "batch must hold at least one trajectory");
        ensure!(horizon >= 1, "horizon must be at least 1");
        ensure!((0.0..1.0).contains(&gamma), "gamma must lie in [0, 1)");
        ensure!(trajectories.iter().all(|t| t.rewards.len() == horizon), "trajectories of unequal horizon");
        Ok(Self { trajectories, gamma, horizon })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn norm(&self) -> f64 {
        horizon_norm(self.gamma, self.horizon)
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        self.trajectories.iter().map(|t| t.seed)
    }

    /// Every visited feature vector, in trajectory order.
    pub fn visited_features(&self) -> Vec<Vec<f64>> {
        self.trajectories.iter().flat_map(|t| t.features.iter().cloned()).collect()
    }

    pub fn merge(mut self, other: Batch) -> Result<Self> {
        ensure!(self.gamma == other.gamma && self.horizon == other.horizon, "cannot merge batches of different shape");
        self.trajectories.extend(other.trajectories);
        Ok(self)
    }

    /// Long-format CSV: `traj_id,t,action,reward`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("traj_id,t,action,reward\n");
        for (i, traj) in self.trajectories.iter().enumerate() {
            for (t, r) in traj.rewards.iter().enumerate() {
                let action = match traj.actions.get(t) {
                    Some(Action::Discrete(a)) => a.to_string(),
                    Some(Action::Continuous(x)) => x.to_string(),
                    None => String::new(),
                };
                let _ = writeln!(out, "{i},{t},{action},{r}");
            }
        }
        out
    }
}

/// Runs one episode of at most `horizon` steps.
pub fn rollout<E: Environment>(env: &mut E, policy: &Policy, horizon: usize, rng: &mut SimRng, seed: u64) -> Result<Trajectory> {
    ensure!(horizon >= 1, "horizon must be at least 1");
    ensure!(
        env.feature_dim() == policy.feature_dim(),
        "environment emits {} features, policy expects {}",
        env.feature_dim(),
        policy.feature_dim()
    );
    let mut features = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut states = Vec::with_capacity(horizon);
    let mut tabular = true;
    let mut obs = env.reset(rng);
    let mut padded = false;
    for t in 0..horizon {
        match env.state_index() {
            Some(s) => states.push(s),
            None => tabular = false,
        }
        let action = policy.sample(&obs, rng)?;
        let step = env.step(action, rng)?;
        if !step.reward.is_finite() {
            return Err(Error::numerical(format!("environment returned reward {} at step {t}", step.reward)));
        }
        features.push(std::mem::replace(&mut obs, step.features));
        actions.push(action);
        rewards.push(step.reward);
        if step.done && t + 1 < horizon {
            padded = true;
            rewards.resize(horizon, 0.0);
            break;
        }
    }
    Ok(Trajectory { features, actions, rewards, states: tabular.then_some(states), seed, padded })
}

/// Collects trajectories with indices `first..first + n` of the master stream.
#[allow(clippy::too_many_arguments)]
pub fn collect_range<E: Environment>(
    env: &E,
    policy: &Policy,
    first: u64,
    n: usize,
    horizon: usize,
    gamma: f64,
    master_seed: u64,
    exec: Execution,
) -> Result<Batch> {
    ensure!(n >= 1, "batch size must be at least 1");
    ensure!(horizon >= 1, "horizon must be at least 1");
    let results = map_indices(n, exec, |i| {
        let seed = trajectory_seed(master_seed, first + i as u64);
        let mut rng = SimRng::seed_from_u64(seed);
        let mut local = env.clone();
        rollout(&mut local, policy, horizon, &mut rng, seed)
    });
    let trajectories = results.into_iter().collect::<Result<Vec<_>>>()?;
    Batch::new(trajectories, gamma, horizon)
}

pub fn collect<E: Environment>(
    env: &E,
    policy: &Policy,
    n: usize,
    horizon: usize,
    gamma: f64,
    master_seed: u64,
    exec: Execution,
) -> Result<Batch> {
    collect_range(env, policy, 0, n, horizon, gamma, master_seed, exec)
}

/// Three batches from disjoint index ranges of one master stream.
pub fn collect_triple<E: Environment>(
    env: &E,
    policy: &Policy,
    sizes: [usize; 3],
    horizon: usize,
    gamma: f64,
    master_seed: u64,
    exec: Execution,
) -> Result<[Batch; 3]> {
    let mut first = 0u64;
    let mut out = Vec::with_capacity(3);
    for n in sizes {
        out.push(collect_range(env, policy, first, n, horizon, gamma, master_seed, exec)?);
        first += n as u64;
    }
    let [a, b, c]: [Batch; 3] = out.try_into().map_err(|_| Error::validation("triple collection failed"))?;
    Ok([a, b, c])
}

/// `Σ_{t<T} γ^t R_t`.
pub fn discounted_return(traj: &Trajectory, gamma: f64) -> f64 {
    let mut acc = NeumaierSum::new();
    let mut disc = 1.0;
    for r in &traj.rewards {
        acc.add(disc * r);
        disc *= gamma;
    }
    acc.value()
}

fn normalized_mean(batch: &Batch, f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = NeumaierSum::new();
    for traj in &batch.trajectories {
        let mut disc = 1.0;
        for &r in &traj.rewards {
            acc.add(disc * f(r));
            disc *= batch.gamma;
        }
    }
    batch.norm() * acc.value() / batch.len() as f64
}

/// `Ĵ = (1−γ)/(1−γ^T) · (1/N) Σ_i Σ_t γ^t R^i_t`.
pub fn estimate_j(batch: &Batch) -> f64 {
    normalized_mean(batch, |r| r)
}

/// `X̂ = (1−γ)/(1−γ^T) · (1/N) Σ_i Σ_t γ^t (R^i_t − j1)(R^i_t − j2)`.
pub fn estimate_volatility(batch: &Batch, j1: f64, j2: f64) -> f64 {
    normalized_mean(batch, |r| (r - j1) * (r - j2))
}

/// Single sampling: `Ĵ` from the same batch plugged in twice.
pub fn estimate_nu2_single(batch: &Batch) -> f64 {
    let j = estimate_j(batch);
    estimate_volatility(batch, j, j)
}

/// Triple sampling: `Ĵ_1` from `d1`, `Ĵ_2` from `d2`, rewards from `d3`.
/// The three batches must not share any trajectory seed.
pub fn estimate_nu2_triple(d1: &Batch, d2: &Batch, d3: &Batch) -> Result<f64> {
    let mut seen = HashSet::new();
    for seed in d1.seeds().chain(d2.seeds()).chain(d3.seeds()) {
        ensure!(seen.insert(seed), "triple sampling needs independent batches: seed {seed} appears twice");
    }
    Ok(estimate_volatility(d3, estimate_j(d1), estimate_j(d2)))
}

/// Unbiased sample variance (divisor `N − 1`) of the discounted returns.
pub fn estimate_sigma(batch: &Batch) -> Result<f64> {
    ensure!(batch.len() >= 2, "return variance needs at least 2 trajectories");
    let returns: Vec<f64> = batch.trajectories.iter().map(|t| discounted_return(t, batch.gamma)).collect();
    let n = returns.len() as f64;
    let mean = returns.iter().copied().collect::<NeumaierSum>().value() / n;
    let ss = returns.iter().map(|g| (g - mean) * (g - mean)).collect::<NeumaierSum>().value();
    Ok(ss / (n - 1.0))
}

/// `M̂ = (1−γ)/(1−γ^T) · (1/N) Σ_i Σ_t γ^t (R^i_t)²`.
pub fn estimate_m2(batch: &Batch) -> f64 {
    normalized_mean(batch, |r| r * r)
}

/// `Ĵ − λ ν̂²` with single-sampled `ν̂²`.
pub fn estimate_eta(batch: &Batch, lambda: f64) -> f64 {
    estimate_j(batch) - lambda * estimate_nu2_single(batch)
}

/// The four summary estimates of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub j: f64,
    pub nu2: f64,
    /// `NaN` for single-trajectory batches.
    pub sigma2: f64,
    pub eta: f64,
}

pub fn batch_stats(batch: &Batch, lambda: f64) -> BatchStats {
    let j = estimate_j(batch);
    let nu2 = estimate_volatility(batch, j, j);
    BatchStats { j, nu2, sigma2: estimate_sigma(batch).unwrap_or(f64::NAN), eta: j - lambda * nu2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_random_tabular, TabularEnv};
    use nalgebra::DMatrix;

    fn traj(rewards: Vec<f64>) -> Trajectory {
        Trajectory { features: vec![], actions: vec![], rewards, states: None, seed: 0, padded: false }
    }

    #[test]
    fn discounted_return_examples() {
        assert_eq!(discounted_return(&traj(vec![1.0, 1.0, 1.0]), 0.5), 1.75);
        assert_eq!(discounted_return(&traj(vec![0.0; 4]), 0.9), 0.0);
        assert_eq!(discounted_return(&traj(vec![2.5, 1.0, 7.0]), 0.0), 2.5);
    }

    #[test]
    fn constant_rewards_normalize_exactly() {
        let b = Batch::new(vec![traj(vec![0.3; 20]), traj(vec![0.3; 20])], 0.9, 20).unwrap();
        assert!((estimate_j(&b) - 0.3).abs() < 1e-15);
        assert!(estimate_volatility(&b, 0.3, 0.3).abs() < 1e-15);
        assert_eq!(estimate_sigma(&b).unwrap(), 0.0);
        let single = Batch::new(vec![traj(vec![4.0])], 0.9, 1).unwrap();
        assert_eq!(estimate_j(&single), 4.0);
        assert!(estimate_sigma(&single).is_err());
        assert_eq!(estimate_eta(&b, 0.0), estimate_j(&b));
    }

    #[test]
    fn collection_is_deterministic_and_thread_independent() {
        let mdp = build_random_tabular(2, 5, 3, 0.9, 1.0).unwrap();
        let env = TabularEnv::new(mdp, 15).unwrap();
        let policy = Policy::softmax(3, 5).unwrap();
        let a = collect(&env, &policy, 40, 15, 0.9, 77, Execution::Parallel).unwrap();
        let b = collect(&env, &policy, 40, 15, 0.9, 77, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert!(a.trajectories.iter().all(|t| t.states.as_ref().unwrap().len() == 15));
        assert!(collect(&env, &policy, 4, 0, 0.9, 1, Execution::Sequential).is_err());
    }

    #[test]
    fn triple_sampling_rejects_shared_seeds() {
        let mdp = build_random_tabular(3, 3, 2, 0.8, 1.0).unwrap();
        let env = TabularEnv::new(mdp, 5).unwrap();
        let policy = Policy::softmax(2, 3).unwrap();
        let [d1, d2, d3] = collect_triple(&env, &policy, [10, 10, 10], 5, 0.8, 9, Execution::Parallel).unwrap();
        assert!(estimate_nu2_triple(&d1, &d2, &d3).is_ok());
        assert!(estimate_nu2_triple(&d1, &d1, &d3).is_err());
    }

    #[test]
    fn deterministic_world_has_identical_returns() {
        let mut transition = vec![0.0; 2 * 2 * 2];
        transition[1] = 1.0; // (0,0) -> 1
        transition[3] = 1.0; // (0,1) -> 1
        transition[4] = 1.0; // (1,0) -> 0
        transition[6] = 1.0; // (1,1) -> 0
        let reward = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -0.5, 0.2]);
        let mu = nalgebra::DVector::from_vec(vec![1.0, 0.0]);
        let mdp = crate::env::TabularMdp::new(2, 2, transition, reward, 0.9, mu, 1.0).unwrap();
        let env = TabularEnv::new(mdp, 6).unwrap();
        let theta = nalgebra::DVector::from_vec(vec![40.0, 40.0, 0.0, 0.0]);
        let policy = Policy::softmax(2, 2).unwrap().with_theta(theta).unwrap();
        let b = collect(&env, &policy, 20, 6, 0.9, 5, Execution::Parallel).unwrap();
        let first = &b.trajectories[0].rewards;
        assert!(b.trajectories.iter().all(|t| &t.rewards == first));
        assert_eq!(estimate_sigma(&b).unwrap(), 0.0);
        assert!(b.to_csv().starts_with("traj_id,t,action,reward\n0,0,0,1\n"));
    }
}
