//! Standard normal CDF and quantile.

use statrs::distribution::{ContinuousCDF, Normal};

fn standard() -> Normal {
    Normal::standard()
}

/// Standard normal CDF.
pub fn cdf(x: f64) -> f64 {
    standard().cdf(x)
}

/// Inverse standard normal CDF (z-score). `p` must lie in (0, 1).
pub fn quantile(p: f64) -> f64 {
    standard().inverse_cdf(p)
}
