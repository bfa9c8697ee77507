//! Special functions and small dense-matrix helpers.

mod linalg;
mod special;
mod sum;

pub use linalg::{sample_covariance, spectral_norm, spectral_norm_general, symmetric_part};
pub use special::{f_cdf, f_pdf, f_quantile, inverse_regularized_beta, ln_gamma, regularized_incomplete_beta, FParams};
pub use sum::{NeumaierSum, neumaier_sum};
