//! Historical simulation and conformal prediction from point-forecast errors.

use super::{quantile_percents, ErrorSample, QuantileCurve};
use crate::stats::empirical_quantile;

/// Point forecast shifted by each empirical quantile of the errors.
pub fn hs_quantiles(point: f64, errors: &ErrorSample) -> QuantileCurve {
    let sorted = errors.sorted();
    quantile_percents().map(|k| point + empirical_quantile(sorted, k as f64 / 100.0))
}

/// Half-width of the conformal interval reported at percentile `k`: the
/// `|1 - 2q|` quantile of absolute errors. Computed from the integer percent so
/// that `k` and `100 - k` share exactly the same width.
pub fn cp_half_width(errors: &ErrorSample, k: usize) -> f64 {
    let level = (100_i64 - 2 * k as i64).unsigned_abs() as f64 / 100.0;
    empirical_quantile(errors.sorted_abs(), level)
}

/// Symmetric intervals around the point forecast; the median is the point
/// forecast itself.
pub fn cp_quantiles(point: f64, errors: &ErrorSample) -> QuantileCurve {
    quantile_percents().map(|k| match k.cmp(&50) {
        std::cmp::Ordering::Less => point - cp_half_width(errors, k),
        std::cmp::Ordering::Greater => point + cp_half_width(errors, k),
        std::cmp::Ordering::Equal => point,
    })
}
