use std::path::Path;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use super::SimRng;
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum PriceSource {
    Csv(String),
    Synthetic { seed: u64, drift: f64, vol: f64 },
}

/// Ordered list of strictly positive prices.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    prices: Vec<f64>,
    source: PriceSource,
}

impl PriceSeries {
    pub fn new(prices: Vec<f64>, source: PriceSource) -> Result<Self> {
        if let Some(i) = prices.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::validation(format!("price at index {i} is not a positive finite number")));
        }
        Ok(Self { prices, source })
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn source(&self) -> &PriceSource {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// A `price` header, then one price per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.prices.len() * 12 + 6);
        out.push_str("price\n");
        for p in &self.prices {
            out.push_str(&format!("{p}\n"));
        }
        out
    }
}

/// Parses one decimal price per line. The first non-comment line may be a
/// header; blank lines and `#` comments are skipped.
pub fn parse_prices(text: &str, source: PriceSource) -> Result<PriceSeries> {
    let mut prices = Vec::new();
    let mut seen_content = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let first = !seen_content;
        seen_content = true;
        match line.parse::<f64>() {
            Ok(p) if p > 0.0 && p.is_finite() => prices.push(p),
            Ok(p) => return Err(Error::Parse { line: idx + 1, msg: format!("non-positive price {p}") }),
            Err(_) if first => continue,
            Err(_) => return Err(Error::Parse { line: idx + 1, msg: format!("not a number: {line:?}") }),
        }
    }
    PriceSeries::new(prices, source)
}

pub fn load_prices_csv(path: impl AsRef<Path>) -> Result<PriceSeries> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_prices(&text, PriceSource::Csv(path.display().to_string()))
}

/// Geometric Brownian motion: `p_{t+1} = p_t exp((drift − vol²/2) + vol z_t)`.
pub fn gen_gbm_prices(seed: u64, n: usize, drift: f64, vol: f64, p0: f64) -> Result<PriceSeries> {
    ensure!(p0 > 0.0, "initial price must be positive");
    ensure!(n >= 2, "need at least two prices");
    ensure!(vol >= 0.0, "volatility must be non-negative");
    let mut rng = SimRng::seed_from_u64(seed);
    let mut prices = Vec::with_capacity(n);
    let mut p = p0;
    prices.push(p);
    let mean_log = drift - 0.5 * vol * vol;
    for _ in 1..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        p *= (mean_log + vol * z).exp();
        prices.push(p);
    }
    PriceSeries::new(prices, PriceSource::Synthetic { seed, drift, vol })
}
