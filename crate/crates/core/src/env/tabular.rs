use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp1};

use super::{discrete_action, Action, Environment, SimRng, Step};
use crate::error::{ensure, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Finite MDP `⟨S, A, P, R, γ, μ⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Flattened `(s, a, s')`.
    transition: Vec<f64>,
    reward: DMatrix<f64>,
    gamma: f64,
    mu: DVector<f64>,
    r_max: f64,
}

impl TabularMdp {
    /// Validates and builds an MDP. `transition` is indexed `(s, a, s')`
    /// row-major, `reward` is `n_states × n_actions`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: DMatrix<f64>,
        gamma: f64,
        mu: DVector<f64>,
        r_max: f64,
    ) -> Result<Self> {
        ensure!(n_states >= 1 && n_actions >= 1, "MDP needs at least one state and one action");
        ensure!((0.0..1.0).contains(&gamma), "gamma must lie in [0, 1), got {gamma}");
        ensure!(
            transition.len() == n_states * n_actions * n_states,
            "transition tensor has {} entries, expected {}",
            transition.len(),
            n_states * n_actions * n_states
        );
        ensure!(
            reward.nrows() == n_states && reward.ncols() == n_actions,
            "reward table is {}x{}, expected {n_states}x{n_actions}",
            reward.nrows(),
            reward.ncols()
        );
        ensure!(mu.len() == n_states, "initial distribution has wrong length");
        for (row, chunk) in transition.chunks(n_states).enumerate() {
            ensure!(chunk.iter().all(|&p| p >= 0.0 && p.is_finite()), "negative transition mass in row {row}");
            let total: f64 = chunk.iter().sum();
            ensure!((total - 1.0).abs() <= STOCHASTIC_TOL, "transition row {row} sums to {total}");
        }
        ensure!(mu.iter().all(|&p| p >= 0.0), "initial distribution has negative mass");
        ensure!((mu.sum() - 1.0).abs() <= STOCHASTIC_TOL, "initial distribution sums to {}", mu.sum());
        ensure!(
            reward.iter().all(|r| r.is_finite() && r.abs() <= r_max),
            "reward magnitude exceeds r_max = {r_max}"
        );
        Ok(Self { n_states, n_actions, transition, reward, gamma, mu, r_max })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.reward[(s, a)]
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    /// Distribution over next states for `(s, a)`.
    pub fn next_distribution(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// Same dynamics with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        ensure!((0.0..1.0).contains(&gamma), "gamma must lie in [0, 1), got {gamma}");
        Ok(Self { gamma, ..self.clone() })
    }

    /// Same dynamics with a different reward table (e.g. a transformed reward).
    /// `r_max` is recomputed from the new table.
    pub fn with_reward(&self, reward: DMatrix<f64>) -> Result<Self> {
        let r_max = reward.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            reward,
            self.gamma,
            self.mu.clone(),
            r_max.max(f64::MIN_POSITIVE),
        )
    }
}

/// Random MDP with Dirichlet(1) transition rows, rewards uniform on
/// `[-r_max, r_max]` and a uniform initial distribution.
pub fn build_random_tabular(seed: u64, n_states: usize, n_actions: usize, gamma: f64, r_max: f64) -> Result<TabularMdp> {
    ensure!(n_states >= 1 && n_actions >= 1, "MDP sizes must be positive");
    ensure!((0.0..1.0).contains(&gamma), "gamma must lie in [0, 1), got {gamma}");
    ensure!(r_max > 0.0, "r_max must be positive");
    let mut rng = SimRng::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let draws: Vec<f64> = (0..n_states).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        transition.extend(draws.iter().map(|x| x / total));
    }
    let reward = DMatrix::from_fn(n_states, n_actions, |_, _| rng.random_range(-r_max..=r_max));
    let mu = DVector::from_element(n_states, 1.0 / n_states as f64);
    TabularMdp::new(n_states, n_actions, transition, reward, gamma, mu, r_max)
}

/// State labels of [`two_cycle_mdp`].
#[derive(Debug, Clone, Copy)]
pub struct TwoCycleStates;

impl TwoCycleStates {
    pub const START: usize = 0;
    pub const A1: usize = 1;
    pub const A2: usize = 2;
    pub const B1: usize = 3;
    pub const B2: usize = 4;
    pub const ACTION_A: usize = 0;
    pub const ACTION_B: usize = 1;
}

/// Deterministic MDP with two disjoint reward 2-cycles reachable from the start
/// state.
///
/// Repeating `a` yields rewards `γ + ε/2, −1, γ + ε/2, …`; repeating `b` yields
/// `10γ + ε, −10, …`. Any switch between cycles pays −90. The start state acts
/// as the first position of either cycle, so `J_a = (ε/2)/(1+γ)` and
/// `J_b = ε/(1+γ)`.
pub fn two_cycle_mdp(epsilon: f64, gamma: f64) -> Result<TabularMdp> {
    ensure!((0.0..1.0).contains(&epsilon), "epsilon must lie in [0, 1), got {epsilon}");
    ensure!(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1), got {gamma}");
    use TwoCycleStates as S;
    const SWITCH: f64 = -90.0;
    let (n_s, n_a) = (5, 2);
    let ra1 = gamma + 0.5 * epsilon;
    let rb1 = 10.0 * gamma + epsilon;

    // (state, action) -> (reward, next state)
    let table = |s: usize, a: usize| -> (f64, usize) {
        match (s, a) {
            (S::START, S::ACTION_A) | (S::A1, S::ACTION_A) => (ra1, S::A2),
            (S::A2, S::ACTION_A) => (-1.0, S::A1),
            (S::START, S::ACTION_B) | (S::B1, S::ACTION_B) => (rb1, S::B2),
            (S::B2, S::ACTION_B) => (-10.0, S::B1),
            (S::A1, S::ACTION_B) => (SWITCH, S::B2),
            (S::A2, S::ACTION_B) => (SWITCH, S::B1),
            (S::B1, S::ACTION_A) => (SWITCH, S::A2),
            (S::B2, S::ACTION_A) => (SWITCH, S::A1),
            _ => unreachable!(),
        }
    };
    let mut transition = vec![0.0; n_s * n_a * n_s];
    let mut reward = DMatrix::zeros(n_s, n_a);
    for s in 0..n_s {
        for a in 0..n_a {
            let (r, next) = table(s, a);
            reward[(s, a)] = r;
            transition[(s * n_a + a) * n_s + next] = 1.0;
        }
    }
    let mut mu = DVector::zeros(n_s);
    mu[S::START] = 1.0;
    TabularMdp::new(n_s, n_a, transition, reward, gamma, mu, SWITCH.abs())
}

/// Sampling view of a [`TabularMdp`] with one-hot state features and a fixed
/// horizon.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    mdp: Arc<TabularMdp>,
    horizon: usize,
    state: usize,
    t: usize,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp, horizon: usize) -> Result<Self> {
        Self::from_shared(Arc::new(mdp), horizon)
    }

    pub fn from_shared(mdp: Arc<TabularMdp>, horizon: usize) -> Result<Self> {
        ensure!(horizon >= 1, "horizon must be at least 1");
        Ok(Self { mdp, horizon, state: 0, t: 0 })
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.mdp.n_states()];
        v[s] = 1.0;
        v
    }
}

pub(crate) fn sample_categorical(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the cumulative sum: take the last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

impl Environment for TabularEnv {
    fn feature_dim(&self) -> usize {
        self.mdp.n_states()
    }

    fn action_count(&self) -> usize {
        self.mdp.n_actions()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn r_max(&self) -> f64 {
        self.mdp.r_max()
    }

    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64> {
        self.state = sample_categorical(self.mdp.mu().as_slice(), rng);
        self.t = 0;
        self.one_hot(self.state)
    }

    fn step(&mut self, action: Action, rng: &mut SimRng) -> Result<Step> {
        let a = discrete_action(action, self.mdp.n_actions())?;
        if self.t >= self.horizon {
            return Err(crate::Error::Contract("step called after episode end".into()));
        }
        let reward = self.mdp.r(self.state, a);
        self.state = sample_categorical(self.mdp.next_distribution(self.state, a), rng);
        self.t += 1;
        Ok(Step { features: self.one_hot(self.state), reward, done: self.t >= self.horizon, clamped: false })
    }

    fn state_index(&self) -> Option<usize> {
        Some(self.state)
    }

    fn tabular(&self) -> Option<&TabularMdp> {
        Some(&self.mdp)
    }
}
