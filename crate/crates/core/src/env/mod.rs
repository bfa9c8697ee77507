//! Environments: finite MDPs for exact analysis and the two financial
//! simulators, all behind one sampling interface.

mod portfolio;
mod prices;
mod tabular;
mod trading;

pub use portfolio::{PortfolioConfig, PortfolioEnv, PortfolioLedger};
pub use prices::{gen_gbm_prices, load_prices_csv, parse_prices, PriceSeries, PriceSource};
pub use tabular::{build_random_tabular, two_cycle_mdp, TabularEnv, TabularMdp, TwoCycleStates};
pub use trading::{TradingConfig, TradingEnv};

pub(crate) use tabular::sample_categorical;

use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Random stream used by every environment and sampler.
pub type SimRng = ChaCha8Rng;

/// An action emitted by a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(f64),
}

impl Action {
    pub fn index(&self) -> Option<usize> {
        match *self {
            Action::Discrete(i) => Some(i),
            Action::Continuous(_) => None,
        }
    }
}

/// Outcome of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub features: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// The environment replaced the requested action (e.g. an unaffordable order).
    pub clamped: bool,
}

/// Episodic environment with feature-vector observations.
///
/// Instances are plain values: cloning yields an independent simulator, so
/// parallel rollouts clone once per trajectory. After `done` the caller must
/// `reset` before stepping again.
pub trait Environment: Clone + Send + Sync {
    fn feature_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    /// Maximum episode length.
    fn horizon(&self) -> usize;
    /// Declared bound on `|reward|`.
    fn r_max(&self) -> f64;
    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64>;
    fn step(&mut self, action: Action, rng: &mut SimRng) -> Result<Step>;
    /// Index of the current state when the environment is a finite MDP.
    fn state_index(&self) -> Option<usize> {
        None
    }
    /// The underlying finite MDP, for environments that have one.
    fn tabular(&self) -> Option<&TabularMdp> {
        None
    }
}

pub(crate) fn discrete_action(action: Action, n: usize) -> Result<usize> {
    match action {
        Action::Discrete(i) if i < n => Ok(i),
        Action::Discrete(i) => Err(crate::Error::Contract(format!("action {i} outside 0..{n}"))),
        Action::Continuous(x) => Err(crate::Error::Contract(format!(
            "continuous action {x} sent to a discrete environment"
        ))),
    }
}
