use std::sync::Arc;

use rand::Rng;

use super::{discrete_action, Action, Environment, PriceSeries, SimRng, Step};
use crate::error::{ensure, Result};

const POSITIONS: [f64; 3] = [-1.0, 0.0, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct TradingConfig {
    /// Number of past percentage changes in the state.
    pub window: usize,
    pub episode_len: usize,
    /// Fee per unit of position change.
    pub fee: f64,
    /// Divide prices by the price at the episode start.
    pub normalize_prices: bool,
}

impl Default for TradingConfig {
    fn default() -> Self {
        Self { window: 10, episode_len: 50, fee: 7e-5, normalize_prices: false }
    }
}

impl TradingConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.window >= 1, "window must be at least 1");
        ensure!(self.episode_len >= 1, "episode_len must be at least 1");
        ensure!(self.fee >= 0.0 && self.fee.is_finite(), "fee must be non-negative");
        Ok(())
    }

    /// Shortest price series that admits one episode.
    pub fn min_prices(&self) -> usize {
        self.window + self.episode_len + 1
    }
}

/// Single-asset trading with positions short / flat / long.
///
/// Action indices 0, 1, 2 map to positions −1, 0, +1. Stepping moves the
/// clock one price forward and pays `a_t (p_t − p_{t−1}) − f |a_t − a_{t−1}|`.
/// The state is the last `window` percentage changes (standardized with the
/// series-wide mean and standard deviation), the previous position, the
/// fraction of the episode remaining and a constant 1.
#[derive(Debug, Clone)]
pub struct TradingEnv {
    prices: Arc<Vec<f64>>,
    pct_mean: f64,
    pct_std: f64,
    config: TradingConfig,
    r_max: f64,
    cursor: usize,
    scale: f64,
    position: f64,
    t: usize,
}

impl TradingEnv {
    pub fn new(prices: &PriceSeries, config: TradingConfig) -> Result<Self> {
        config.validate()?;
        ensure!(
            prices.len() >= config.min_prices(),
            "price series has {} points, need at least {} for window {} and episode length {}",
            prices.len(),
            config.min_prices(),
            config.window,
            config.episode_len
        );
        let p = prices.prices();
        let pct: Vec<f64> = p.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
        let n = pct.len() as f64;
        let pct_mean = pct.iter().sum::<f64>() / n;
        let var = pct.iter().map(|x| (x - pct_mean).powi(2)).sum::<f64>() / n;
        let pct_std = if var > 0.0 { var.sqrt() } else { 1.0 };

        let max_move = p.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        let min_price = p.iter().copied().fold(f64::INFINITY, f64::min);
        let move_bound = if config.normalize_prices { max_move / min_price } else { max_move };
        let r_max = move_bound + 2.0 * config.fee;

        Ok(Self {
            prices: Arc::new(p.to_vec()),
            pct_mean,
            pct_std,
            config,
            r_max,
            cursor: 0,
            scale: 1.0,
            position: 0.0,
            t: 0,
        })
    }

    pub fn config(&self) -> &TradingConfig {
        &self.config
    }

    /// Index of the most recently observed price.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn position(&self) -> f64 {
        self.position
    }

    /// Price at `index` as used in rewards (after optional normalization).
    pub fn price(&self, index: usize) -> f64 {
        self.prices[index] / self.scale
    }

    pub fn position_of(action: usize) -> f64 {
        POSITIONS[action]
    }

    fn features(&self) -> Vec<f64> {
        let w = self.config.window;
        let mut x = Vec::with_capacity(w + 3);
        for i in (self.cursor + 1 - w)..=self.cursor {
            let pct = self.prices[i] / self.prices[i - 1] - 1.0;
            x.push((pct - self.pct_mean) / self.pct_std);
        }
        x.push(self.position);
        x.push((self.config.episode_len - self.t) as f64 / self.config.episode_len as f64);
        x.push(1.0);
        x
    }
}

impl Environment for TradingEnv {
    fn feature_dim(&self) -> usize {
        self.config.window + 3
    }

    fn action_count(&self) -> usize {
        POSITIONS.len()
    }

    fn horizon(&self) -> usize {
        self.config.episode_len
    }

    fn r_max(&self) -> f64 {
        self.r_max
    }

    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64> {
        let last_start = self.prices.len() - 1 - self.config.episode_len;
        self.cursor = rng.random_range(self.config.window..=last_start);
        self.scale = if self.config.normalize_prices { self.prices[self.cursor] } else { 1.0 };
        self.position = 0.0;
        self.t = 0;
        self.features()
    }

    fn step(&mut self, action: Action, _rng: &mut SimRng) -> Result<Step> {
        let a = POSITIONS[discrete_action(action, POSITIONS.len())?];
        if self.t >= self.config.episode_len {
            return Err(crate::Error::Contract("step called after episode end".into()));
        }
        self.cursor += 1;
        let reward =
            a * (self.price(self.cursor) - self.price(self.cursor - 1)) - self.config.fee * (a - self.position).abs();
        self.position = a;
        self.t += 1;
        Ok(Step {
            features: self.features(),
            reward,
            done: self.t >= self.config.episode_len,
            clamped: false,
        })
    }
}
