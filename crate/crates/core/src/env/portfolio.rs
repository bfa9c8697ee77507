use rand::Rng;

use super::{discrete_action, Action, Environment, SimRng, Step};
use crate::error::{ensure, Result};

/// Liquid / non-liquid portfolio parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioConfig {
    /// Episode length `T`.
    pub horizon: usize,
    /// Gross per-step return of the liquid asset.
    pub r_l: f64,
    /// Steps until a non-liquid block matures (`N`).
    pub maturity: usize,
    /// Gross return of a non-liquid block over its lifetime, high regime.
    pub r_nl_high: f64,
    pub r_nl_low: f64,
    /// Largest number of units that can be bought in one step (`M`).
    pub max_order: usize,
    pub p_risk: f64,
    pub p_switch: f64,
    /// Cost of one non-liquid unit, paid from the liquid account.
    pub order_cost: f64,
    pub initial_liquid: f64,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            r_l: 1.001,
            maturity: 4,
            r_nl_high: 2.0,
            r_nl_low: 1.1,
            max_order: 10,
            p_risk: 0.05,
            p_switch: 0.1,
            order_cost: 0.2 / 10.0,
            initial_liquid: 1.0,
        }
    }
}

impl PortfolioConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.horizon >= 1, "portfolio horizon must be at least 1");
        ensure!(self.maturity >= 1, "maturity must be at least 1");
        ensure!(self.max_order >= 1, "max_order must be at least 1");
        ensure!(self.r_l > 0.0, "r_l must be positive");
        ensure!(self.r_nl_high > 0.0 && self.r_nl_low > 0.0, "non-liquid rates must be positive");
        ensure!((0.0..=1.0).contains(&self.p_risk), "p_risk must be a probability");
        ensure!((0.0..=1.0).contains(&self.p_switch), "p_switch must be a probability");
        ensure!(self.order_cost > 0.0, "order cost must be positive");
        ensure!(self.initial_liquid > 0.0, "initial liquid holdings must be positive");
        Ok(())
    }
}

/// Money flows of the most recent step, for auditing conservation of value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PortfolioLedger {
    pub total_before: f64,
    pub total_after: f64,
    pub interest: f64,
    pub payout: f64,
    /// Book value of the blocks that matured (paid or defaulted).
    pub matured_book: f64,
    pub purchase_cost: f64,
    pub units_bought: usize,
}

/// Portfolio of a liquid asset and maturing non-liquid blocks.
///
/// Per step: the block reaching maturity defaults with probability `p_risk`
/// or pays its book value times the rate locked at purchase; the remaining
/// blocks age by one step; the order is clamped to what the liquid account can
/// afford and booked at maturity `N`; the liquid account compounds by `r_l`;
/// the non-liquid regime switches with probability `p_switch`. The reward is
/// the change of the liquid account.
///
/// Features are `[x_1, x_2..x_{N+1}, x_{N+2}]`: allocations as fractions of
/// total book value (liquid first, then blocks by time to maturity 1..N) and
/// the current non-liquid rate minus the mean of past rates.
#[derive(Debug, Clone)]
pub struct PortfolioEnv {
    config: PortfolioConfig,
    liquid: f64,
    /// `book[k]`: value of the block with time to maturity `k + 1`.
    book: Vec<f64>,
    locked_rate: Vec<f64>,
    high_regime: bool,
    rate_sum: f64,
    rate_count: usize,
    t: usize,
    ledger: PortfolioLedger,
}

impl PortfolioEnv {
    pub fn new(config: PortfolioConfig) -> Result<Self> {
        config.validate()?;
        let n = config.maturity;
        let liquid = config.initial_liquid;
        Ok(Self {
            config,
            liquid,
            book: vec![0.0; n],
            locked_rate: vec![0.0; n],
            high_regime: false,
            rate_sum: 0.0,
            rate_count: 0,
            t: 0,
            ledger: PortfolioLedger::default(),
        })
    }

    pub fn config(&self) -> &PortfolioConfig {
        &self.config
    }

    pub fn liquid(&self) -> f64 {
        self.liquid
    }

    pub fn book(&self) -> &[f64] {
        &self.book
    }

    pub fn total_value(&self) -> f64 {
        self.liquid + self.book.iter().sum::<f64>()
    }

    pub fn last_ledger(&self) -> PortfolioLedger {
        self.ledger
    }

    fn current_rate(&self) -> f64 {
        if self.high_regime {
            self.config.r_nl_high
        } else {
            self.config.r_nl_low
        }
    }

    fn features(&self) -> Vec<f64> {
        let total = self.total_value();
        let mut x = Vec::with_capacity(self.config.maturity + 2);
        x.push(self.liquid / total);
        x.extend(self.book.iter().map(|b| b / total));
        let past_mean = if self.rate_count == 0 { self.current_rate() } else { self.rate_sum / self.rate_count as f64 };
        x.push(self.current_rate() - past_mean);
        x
    }

    /// Upper bound on total wealth over an episode: every unit can at most earn
    /// the high non-liquid return once per maturity period on top of liquid
    /// compounding.
    fn wealth_bound(&self) -> f64 {
        let c = &self.config;
        let periods = c.horizon.div_ceil(c.maturity) as i32;
        c.initial_liquid * c.r_l.max(1.0).powi(c.horizon as i32) * c.r_nl_high.max(1.0).powi(periods)
    }
}

impl Environment for PortfolioEnv {
    fn feature_dim(&self) -> usize {
        self.config.maturity + 2
    }

    fn action_count(&self) -> usize {
        self.config.max_order + 1
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn r_max(&self) -> f64 {
        let c = &self.config;
        self.wealth_bound() * c.r_nl_high.max(c.r_l).max(1.0)
    }

    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64> {
        self.liquid = self.config.initial_liquid;
        self.book.iter_mut().for_each(|b| *b = 0.0);
        self.locked_rate.iter_mut().for_each(|r| *r = 0.0);
        self.high_regime = rng.random_bool(0.5);
        self.rate_sum = 0.0;
        self.rate_count = 0;
        self.t = 0;
        self.ledger = PortfolioLedger::default();
        self.features()
    }

    fn step(&mut self, action: Action, rng: &mut SimRng) -> Result<Step> {
        let requested = discrete_action(action, self.config.max_order + 1)?;
        if self.t >= self.config.horizon {
            return Err(crate::Error::Contract("step called after episode end".into()));
        }
        let c = &self.config;
        let total_before = self.total_value();
        let liquid_before = self.liquid;

        // maturity
        let matured_book = self.book[0];
        let mut payout = 0.0;
        if matured_book > 0.0 && !rng.random_bool(c.p_risk) {
            payout = matured_book * self.locked_rate[0];
        }
        self.book.rotate_left(1);
        self.locked_rate.rotate_left(1);
        let last = c.maturity - 1;
        self.book[last] = 0.0;
        self.locked_rate[last] = 0.0;

        // order, clamped to the affordable amount
        let cash = self.liquid + payout;
        let affordable = ((cash / c.order_cost) + 1e-12).floor().max(0.0) as usize;
        let units = requested.min(affordable);
        let purchase_cost = units as f64 * c.order_cost;
        if units > 0 {
            self.book[last] = purchase_cost;
            self.locked_rate[last] = self.current_rate();
        }

        let after_trades = cash - purchase_cost;
        let interest = after_trades * (c.r_l - 1.0);
        self.liquid = after_trades + interest;

        // regime bookkeeping: the rate in force during this step joins the history
        self.rate_sum += self.current_rate();
        self.rate_count += 1;
        if rng.random_bool(c.p_switch) {
            self.high_regime = !self.high_regime;
        }
        self.t += 1;

        let reward = self.liquid - liquid_before;
        self.ledger = PortfolioLedger {
            total_before,
            total_after: self.total_value(),
            interest,
            payout,
            matured_book,
            purchase_cost,
            units_bought: units,
        };
        Ok(Step {
            features: self.features(),
            reward,
            done: self.t >= self.config.horizon,
            clamped: units != requested,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn default_config_matches_reference_table() {
        let c = PortfolioConfig::default();
        assert_eq!(c.horizon, 50);
        assert_eq!(c.r_l, 1.001);
        assert_eq!(c.maturity, 4);
        assert_eq!(c.r_nl_high, 2.0);
        assert_eq!(c.r_nl_low, 1.1);
        assert_eq!(c.max_order, 10);
        assert_eq!(c.p_risk, 0.05);
        assert_eq!(c.p_switch, 0.1);
        assert!((c.order_cost - 0.02).abs() < 1e-15);
    }

    #[test]
    fn buying_nothing_earns_liquid_interest() {
        let mut env = PortfolioEnv::new(PortfolioConfig { p_risk: 0.7, ..Default::default() }).unwrap();
        let mut rng = SimRng::seed_from_u64(5);
        let x0 = env.reset(&mut rng);
        assert_eq!(x0[0], 1.0);
        let first = env.step(Action::Discrete(0), &mut rng).unwrap();
        assert!((first.reward - 0.001).abs() < 1e-15);
        let mut prev_liquid = env.liquid();
        for _ in 1..50 {
            let s = env.step(Action::Discrete(0), &mut rng).unwrap();
            assert!((s.reward - prev_liquid * 0.001).abs() < 1e-15);
            assert!(s.reward > 0.0);
            prev_liquid = env.liquid();
        }
    }

    #[test]
    fn value_is_conserved_up_to_interest_and_maturity() {
        let mut env = PortfolioEnv::new(PortfolioConfig::default()).unwrap();
        let mut rng = SimRng::seed_from_u64(11);
        env.reset(&mut rng);
        let mut defaults = 0;
        for t in 0..50 {
            let a = (t * 7) % 11;
            env.step(Action::Discrete(a), &mut rng).unwrap();
            let l = env.last_ledger();
            let expected = l.total_before + l.interest + l.payout - l.matured_book;
            assert!((l.total_after - expected).abs() < 1e-12, "t={t}: {l:?}");
            if l.matured_book > 0.0 && l.payout == 0.0 {
                defaults += 1;
            }
        }
        assert!(env.liquid() > 0.0);
        let _ = defaults;
    }

    #[test]
    fn unaffordable_orders_are_clamped() {
        let cfg = PortfolioConfig { initial_liquid: 0.05, ..Default::default() };
        let mut env = PortfolioEnv::new(cfg).unwrap();
        let mut rng = SimRng::seed_from_u64(2);
        env.reset(&mut rng);
        let s = env.step(Action::Discrete(10), &mut rng).unwrap();
        assert!(s.clamped);
        assert_eq!(env.last_ledger().units_bought, 2);
        assert!(env.liquid() >= 0.0);
        assert!(env.step(Action::Discrete(11), &mut rng).is_err());
    }

    #[test]
    fn seeded_rollouts_repeat() {
        let run = || {
            let mut env = PortfolioEnv::new(PortfolioConfig::default()).unwrap();
            let mut rng = SimRng::seed_from_u64(99);
            env.reset(&mut rng);
            (0..50).map(|t| env.step(Action::Discrete(t % 4), &mut rng).unwrap().reward).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
