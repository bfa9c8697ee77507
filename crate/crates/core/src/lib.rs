//! Mean-volatility risk-averse policy optimization.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`] special functions (incomplete beta, F quantiles) and small
//!   matrix helpers used by the safe step-size machinery;
//! * [`env`] tabular MDPs, the two-cycle example, the portfolio and trading
//!   simulators and price-series tooling;
//! * [`policy`] linear softmax / Gaussian policies with closed-form score,
//!   observed information, KL divergence and Fisher-vector products;
//! * [`exact`] dynamic-programming solvers for every objective-related quantity
//!   on a [`env::TabularMdp`];
//! * [`sampling`] trajectory collection and the finite-horizon estimators;
//! * [`gradients`] sampled mean-volatility policy gradients;
//! * [`optim`] VOLA-PG, TRVO, TRPO-exp, the mean-variance baseline and safe
//!   meta-parameters;
//! * [`verify`] the theorem-verification suite driven by the CLI;
//! * [`frontier`] risk-aversion sweeps, [`config`] the run-file format and
//!   [`report`] artifact writing.
//!
//! Rollouts and corpus checks run on rayon when the `parallel` feature is
//! enabled (the default) and fall back to sequential iteration otherwise. Both
//! paths produce bit-identical results.

pub mod config;
pub mod env;
pub mod error;
pub mod exact;
pub mod frontier;
pub mod gradients;
pub mod numerics;
pub mod optim;
pub mod parallel;
pub mod policy;
pub mod report;
pub mod sampling;
pub mod verify;

pub use error::{Error, Result};
