//! Run configuration: a flat, sectioned `key = value` format.
//!
//! ```text
//! # comments start with '#'
//! [env]
//! kind = two-cycle          # two-cycle | portfolio | trading | random-tabular
//! epsilon = 0.2
//!
//! [policy]
//! kind = softmax            # softmax | gaussian
//!
//! [train]
//! algo = vola-pg
//! lambda = 0.5
//! gamma = 0.9
//!
//! [sweep]
//! lambda_grid = 0, 0.1, 1
//! ```
//!
//! Keys per section:
//!
//! * `[env]`: `kind`; two-cycle: `epsilon`; random-tabular: `seed`,
//!   `n_states`, `n_actions`, `r_max`; portfolio: `horizon`, `r_l`,
//!   `maturity`, `r_nl_high`, `r_nl_low`, `max_order`, `p_risk`, `p_switch`,
//!   `order_cost`, `initial_liquid`; trading: `window`, `episode_len`, `fee`,
//!   `normalize_prices`, and either `prices_csv` or `gbm_seed`, `gbm_n`,
//!   `gbm_drift`, `gbm_vol`, `gbm_p0`.
//! * `[policy]`: `kind`, `sigma`, `checkpoint`.
//! * `[train]`: `algo`, `lambda`, `gamma`, `horizon`, `batch`, `iterations`,
//!   `alpha`, `trust_region` (kl | penalty), `kl_radius`, `kl_radius_final`,
//!   `cg_iters`, `cg_damping`, `backtrack_coef`, `backtrack_steps`, `c`, `seed`,
//!   `estimator` (pgt | gpomdp | gpomdp-baseline), `normalization`
//!   (as-printed | eta), `j_sampling` (single | independent), `max_batch`,
//!   `smoothing_safety`, `delta`.
//! * `[sweep]`: `lambda_grid`, `c_grid`, `eval_batch`, `eval_seed`.
//!
//! Unknown sections, unknown keys, repeated keys and keys that do not apply
//! to the chosen environment kind are errors. The environment horizon
//! defaults to the environment's own episode length when `[train] horizon`
//! is absent.

use std::path::PathBuf;
use std::str::FromStr;

use crate::env::{
    build_random_tabular, gen_gbm_prices, load_prices_csv, two_cycle_mdp, Action, Environment, PortfolioConfig,
    PortfolioEnv, SimRng, Step, TabularEnv, TabularMdp, TradingConfig, TradingEnv,
};
use crate::error::{Error, Result};
use crate::gradients::{GradForm, Normalization};
use crate::optim::{Algorithm, JSampling, TrainConfig, TrustRegion};
use crate::policy::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    TwoCycle,
    Portfolio,
    Trading,
    RandomTabular,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [EnvKind::TwoCycle, EnvKind::Portfolio, EnvKind::Trading, EnvKind::RandomTabular];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::TwoCycle => "two-cycle",
            EnvKind::Portfolio => "portfolio",
            EnvKind::Trading => "trading",
            EnvKind::RandomTabular => "random-tabular",
        }
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown environment '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriceSpec {
    Csv(PathBuf),
    Gbm { seed: u64, n: usize, drift: f64, vol: f64, p0: f64 },
}

impl Default for PriceSpec {
    fn default() -> Self {
        PriceSpec::Gbm { seed: 0, n: 2000, drift: 2e-4, vol: 0.01, p0: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    TwoCycle { epsilon: f64 },
    RandomTabular { seed: u64, n_states: usize, n_actions: usize, r_max: f64 },
    Portfolio(PortfolioConfig),
    Trading { config: TradingConfig, prices: PriceSpec },
}

impl EnvSpec {
    /// Default parameters for `kind`.
    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::TwoCycle => EnvSpec::TwoCycle { epsilon: 0.2 },
            EnvKind::RandomTabular => EnvSpec::RandomTabular { seed: 0, n_states: 10, n_actions: 3, r_max: 1.0 },
            EnvKind::Portfolio => EnvSpec::Portfolio(PortfolioConfig::default()),
            EnvKind::Trading => EnvSpec::Trading { config: TradingConfig::default(), prices: PriceSpec::default() },
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            EnvSpec::TwoCycle { .. } => EnvKind::TwoCycle,
            EnvSpec::RandomTabular { .. } => EnvKind::RandomTabular,
            EnvSpec::Portfolio(_) => EnvKind::Portfolio,
            EnvSpec::Trading { .. } => EnvKind::Trading,
        }
    }

    /// Episode length the environment defines for itself, if any.
    pub fn natural_horizon(&self) -> Option<usize> {
        match self {
            EnvSpec::Portfolio(c) => Some(c.horizon),
            EnvSpec::Trading { config, .. } => Some(config.episode_len),
            _ => None,
        }
    }

    /// Builds the environment. Tabular kinds take `gamma` and `horizon` from
    /// the training configuration.
    pub fn build(&self, gamma: f64, horizon: usize) -> Result<EnvInstance> {
        Ok(match self {
            EnvSpec::TwoCycle { epsilon } => EnvInstance::Tabular(TabularEnv::new(two_cycle_mdp(*epsilon, gamma)?, horizon)?),
            EnvSpec::RandomTabular { seed, n_states, n_actions, r_max } => {
                let mdp = build_random_tabular(*seed, *n_states, *n_actions, gamma, *r_max)?;
                EnvInstance::Tabular(TabularEnv::new(mdp, horizon)?)
            }
            EnvSpec::Portfolio(c) => EnvInstance::Portfolio(PortfolioEnv::new(c.clone())?),
            EnvSpec::Trading { config, prices } => {
                let series = match prices {
                    PriceSpec::Csv(path) => load_prices_csv(path)?,
                    PriceSpec::Gbm { seed, n, drift, vol, p0 } => gen_gbm_prices(*seed, *n, *drift, *vol, *p0)?,
                };
                EnvInstance::Trading(TradingEnv::new(&series, config.clone())?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Softmax,
    Gaussian { sigma: f64 },
    Checkpoint(PathBuf),
}

impl PolicySpec {
    /// Zero-parameter policy sized for `env`, or the stored checkpoint.
    pub fn build<E: Environment>(&self, env: &E) -> Result<Policy> {
        match self {
            PolicySpec::Softmax => Policy::softmax(env.action_count(), env.feature_dim()),
            PolicySpec::Gaussian { sigma } => Policy::gaussian(env.feature_dim(), *sigma),
            PolicySpec::Checkpoint(path) => Policy::load(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub lambda_grid: Vec<f64>,
    pub c_grid: Vec<f64>,
    pub eval_batch: usize,
    pub eval_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { lambda_grid: vec![0.0, 0.05, 0.2, 1.0], c_grid: vec![0.01, 0.1, 1.0], eval_batch: 1000, eval_seed: 1 }
    }
}

/// Everything needed to run one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub policy: PolicySpec,
    pub algorithm: Algorithm,
    pub train: TrainConfig,
    /// `[train] horizon` was given explicitly.
    pub horizon_set: bool,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::default_for(EnvKind::TwoCycle),
            policy: PolicySpec::Softmax,
            algorithm: Algorithm::default(),
            train: TrainConfig::default(),
            horizon_set: false,
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Training horizon after defaulting to the environment's own.
    pub fn horizon(&self) -> usize {
        match (self.horizon_set, self.env.natural_horizon()) {
            (false, Some(h)) => h,
            _ => self.train.horizon,
        }
    }

    /// Training configuration with the resolved horizon.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { horizon: self.horizon(), ..self.train.clone() }
    }

    pub fn build_env(&self) -> Result<EnvInstance> {
        self.env.build(self.train.gamma, self.horizon())
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if let PolicySpec::Gaussian { sigma } = self.policy {
            crate::error::ensure!(sigma > 0.0 && sigma.is_finite(), "sigma must be positive, got {sigma}");
        }
        crate::error::ensure!(self.sweep.eval_batch >= 2, "eval_batch must be at least 2");
        Ok(())
    }

    /// Parses configuration text. Line numbers in errors are 1-based.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        let mut section: Option<Section> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| parse_err(line, "unterminated section header"))?;
                section = Some(Section::from_name(name.trim()).ok_or_else(|| parse_err(line, format!("unknown section [{}]", name.trim())))?);
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| parse_err(line, "expected 'key = value'"))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.ok_or_else(|| parse_err(line, "key outside of any section"))?;
            if key.is_empty() {
                return Err(parse_err(line, "empty key"));
            }
            if let Some(prev) = entries.iter().find(|e| e.section == sec && e.key == key) {
                return Err(parse_err(line, format!("key '{key}' repeats line {}", prev.line)));
            }
            entries.push(Entry { section: sec, key: key.to_string(), value: value.to_string(), line });
        }

        let mut cfg = RunConfig::default();
        let env_kind = match entries.iter().find(|e| e.section == Section::Env && e.key == "kind") {
            Some(e) => e.value.parse::<EnvKind>().map_err(|err| parse_err(e.line, err.to_string()))?,
            None if entries.iter().any(|e| e.section == Section::Env) => {
                let first = entries.iter().find(|e| e.section == Section::Env).map_or(0, |e| e.line);
                return Err(parse_err(first, "[env] needs a 'kind' key"));
            }
            None => EnvKind::TwoCycle,
        };
        cfg.env = EnvSpec::default_for(env_kind);

        let mut policy_kind = "softmax".to_string();
        let mut sigma: Option<(f64, usize)> = None;
        let mut checkpoint: Option<PathBuf> = None;
        let mut trust_region_penalty = false;
        let mut kl_radius = match cfg.train.trust_region {
            TrustRegion::KlConstraint { radius } => radius,
            TrustRegion::Penalty => 0.01,
        };
        let mut gbm_keys = false;
        let mut prices_csv: Option<(PathBuf, usize)> = None;

        for e in &entries {
            let v = Value { text: &e.value, line: e.line };
            let unknown = || parse_err(e.line, format!("unknown key '{}' in [{}]", e.key, e.section.name()));
            match e.section {
                Section::Env => match (&mut cfg.env, e.key.as_str()) {
                    (_, "kind") => {}
                    (EnvSpec::TwoCycle { epsilon }, "epsilon") => *epsilon = v.float()?,
                    (EnvSpec::RandomTabular { seed, .. }, "seed") => *seed = v.int()?,
                    (EnvSpec::RandomTabular { n_states, .. }, "n_states") => *n_states = v.int()?,
                    (EnvSpec::RandomTabular { n_actions, .. }, "n_actions") => *n_actions = v.int()?,
                    (EnvSpec::RandomTabular { r_max, .. }, "r_max") => *r_max = v.float()?,
                    (EnvSpec::Portfolio(c), key) => match key {
                        "horizon" => c.horizon = v.int()?,
                        "r_l" => c.r_l = v.float()?,
                        "maturity" => c.maturity = v.int()?,
                        "r_nl_high" => c.r_nl_high = v.float()?,
                        "r_nl_low" => c.r_nl_low = v.float()?,
                        "max_order" => c.max_order = v.int()?,
                        "p_risk" => c.p_risk = v.float()?,
                        "p_switch" => c.p_switch = v.float()?,
                        "order_cost" => c.order_cost = v.float()?,
                        "initial_liquid" => c.initial_liquid = v.float()?,
                        _ => return Err(unknown()),
                    },
                    (EnvSpec::Trading { config, prices }, key) => match key {
                        "window" => config.window = v.int()?,
                        "episode_len" => config.episode_len = v.int()?,
                        "fee" => config.fee = v.float()?,
                        "normalize_prices" => config.normalize_prices = v.boolean()?,
                        "prices_csv" => prices_csv = Some((PathBuf::from(v.text), e.line)),
                        gbm => {
                            let PriceSpec::Gbm { seed, n, drift, vol, p0 } = prices else { unreachable!() };
                            match gbm {
                                "gbm_seed" => *seed = v.int()?,
                                "gbm_n" => *n = v.int()?,
                                "gbm_drift" => *drift = v.float()?,
                                "gbm_vol" => *vol = v.float()?,
                                "gbm_p0" => *p0 = v.float()?,
                                _ => return Err(unknown()),
                            }
                            gbm_keys = true;
                        }
                    },
                    _ => return Err(unknown()),
                },
                Section::Policy => match e.key.as_str() {
                    "kind" => policy_kind = v.text.to_string(),
                    "sigma" => sigma = Some((v.float()?, e.line)),
                    "checkpoint" => checkpoint = Some(PathBuf::from(v.text)),
                    _ => return Err(unknown()),
                },
                Section::Train => {
                    let t = &mut cfg.train;
                    match e.key.as_str() {
                        "algo" => cfg.algorithm = v.parsed()?,
                        "lambda" => t.lambda = v.float()?,
                        "gamma" => t.gamma = v.float()?,
                        "horizon" => {
                            t.horizon = v.int()?;
                            cfg.horizon_set = true;
                        }
                        "batch" => t.batch = v.int()?,
                        "iterations" => t.iterations = v.int()?,
                        "alpha" => t.alpha = v.float()?,
                        "trust_region" => {
                            trust_region_penalty = match v.text {
                                "kl" => false,
                                "penalty" => true,
                                other => return Err(parse_err(e.line, format!("trust_region must be kl or penalty, got '{other}'"))),
                            }
                        }
                        "kl_radius" => kl_radius = v.float()?,
                        "kl_radius_final" => t.kl_radius_final = Some(v.float()?),
                        "cg_iters" => t.cg_iters = v.int()?,
                        "cg_damping" => t.cg_damping = v.float()?,
                        "backtrack_coef" => t.backtrack_coef = v.float()?,
                        "backtrack_steps" => t.backtrack_steps = v.int()?,
                        "c" => t.c = v.float()?,
                        "seed" => t.seed = v.int()?,
                        "estimator" => {
                            t.estimator = match v.text {
                                "pgt" => GradForm::Pgt,
                                "gpomdp" => GradForm::Gpomdp { baseline: false },
                                "gpomdp-baseline" => GradForm::Gpomdp { baseline: true },
                                other => return Err(parse_err(e.line, format!("unknown estimator '{other}'"))),
                            }
                        }
                        "normalization" => {
                            t.normalization = match v.text {
                                "as-printed" => Normalization::AsPrinted,
                                "eta" => Normalization::Eta,
                                other => return Err(parse_err(e.line, format!("unknown normalization '{other}'"))),
                            }
                        }
                        "j_sampling" => {
                            t.j_sampling = match v.text {
                                "single" => JSampling::Single,
                                "independent" => JSampling::Independent,
                                other => return Err(parse_err(e.line, format!("unknown j_sampling '{other}'"))),
                            }
                        }
                        "max_batch" => t.max_batch = v.int()?,
                        "smoothing_safety" => t.smoothing_safety = v.float()?,
                        "delta" => t.delta = v.float()?,
                        _ => return Err(unknown()),
                    }
                }
                Section::Sweep => match e.key.as_str() {
                    "lambda_grid" => cfg.sweep.lambda_grid = parse_grid(v.text).map_err(|m| parse_err(e.line, m))?,
                    "c_grid" => cfg.sweep.c_grid = parse_grid(v.text).map_err(|m| parse_err(e.line, m))?,
                    "eval_batch" => cfg.sweep.eval_batch = v.int()?,
                    "eval_seed" => cfg.sweep.eval_seed = v.int()?,
                    _ => return Err(unknown()),
                },
            }
        }

        if let Some((path, line)) = prices_csv {
            if gbm_keys {
                return Err(parse_err(line, "prices_csv cannot be combined with gbm_* keys"));
            }
            if let EnvSpec::Trading { prices, .. } = &mut cfg.env {
                *prices = PriceSpec::Csv(path);
            }
        }
        if trust_region_penalty {
            cfg.train.trust_region = TrustRegion::Penalty;
        } else {
            cfg.train.trust_region = TrustRegion::KlConstraint { radius: kl_radius };
        }
        cfg.policy = match (policy_kind.as_str(), checkpoint) {
            (_, Some(path)) => PolicySpec::Checkpoint(path),
            ("softmax", None) => {
                if let Some((_, line)) = sigma {
                    return Err(parse_err(line, "sigma applies to gaussian policies only"));
                }
                PolicySpec::Softmax
            }
            ("gaussian", None) => PolicySpec::Gaussian { sigma: sigma.map_or(1.0, |s| s.0) },
            (other, None) => {
                let line = entries.iter().find(|e| e.section == Section::Policy && e.key == "kind").map_or(0, |e| e.line);
                return Err(parse_err(line, format!("policy kind must be softmax or gaussian, got '{other}'")));
            }
        };
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Parses a comma-separated list of finite reals.
pub fn parse_grid(text: &str) -> std::result::Result<Vec<f64>, String> {
    let grid: Vec<f64> = text
        .split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| format!("'{s}' is not a finite number"))
        })
        .collect::<std::result::Result<_, _>>()?;
    if grid.is_empty() {
        return Err("grid is empty".into());
    }
    Ok(grid)
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Env,
    Policy,
    Train,
    Sweep,
}

impl Section {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "env" => Section::Env,
            "policy" => Section::Policy,
            "train" => Section::Train,
            "sweep" => Section::Sweep,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Section::Env => "env",
            Section::Policy => "policy",
            Section::Train => "train",
            Section::Sweep => "sweep",
        }
    }
}

struct Entry {
    section: Section,
    key: String,
    value: String,
    line: usize,
}

struct Value<'a> {
    text: &'a str,
    line: usize,
}

impl Value<'_> {
    fn float(&self) -> Result<f64> {
        self.text
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| parse_err(self.line, format!("expected a finite number, got '{}'", self.text)))
    }

    fn int<T: FromStr>(&self) -> Result<T> {
        self.text
            .parse::<T>()
            .map_err(|_| parse_err(self.line, format!("expected a non-negative integer, got '{}'", self.text)))
    }

    fn boolean(&self) -> Result<bool> {
        match self.text {
            "true" => Ok(true),
            "false" => Ok(false),
            other => Err(parse_err(self.line, format!("expected true or false, got '{other}'"))),
        }
    }

    fn parsed<T: FromStr<Err = Error>>(&self) -> Result<T> {
        self.text.parse::<T>().map_err(|e| parse_err(self.line, e.to_string()))
    }
}

/// Any of the built-in environments.
#[derive(Debug, Clone)]
pub enum EnvInstance {
    Tabular(TabularEnv),
    Portfolio(PortfolioEnv),
    Trading(TradingEnv),
}

macro_rules! delegate {
    ($self:ident, $env:ident => $body:expr) => {
        match $self {
            EnvInstance::Tabular($env) => $body,
            EnvInstance::Portfolio($env) => $body,
            EnvInstance::Trading($env) => $body,
        }
    };
}

impl Environment for EnvInstance {
    fn feature_dim(&self) -> usize {
        delegate!(self, e => e.feature_dim())
    }

    fn action_count(&self) -> usize {
        delegate!(self, e => e.action_count())
    }

    fn horizon(&self) -> usize {
        delegate!(self, e => e.horizon())
    }

    fn r_max(&self) -> f64 {
        delegate!(self, e => e.r_max())
    }

    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64> {
        delegate!(self, e => e.reset(rng))
    }

    fn step(&mut self, action: Action, rng: &mut SimRng) -> Result<Step> {
        delegate!(self, e => e.step(action, rng))
    }

    fn state_index(&self) -> Option<usize> {
        delegate!(self, e => e.state_index())
    }

    fn tabular(&self) -> Option<&TabularMdp> {
        delegate!(self, e => e.tabular())
    }
}
