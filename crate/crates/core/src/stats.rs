use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a percentile is read off a finite sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileMethod {
    /// Linear interpolation between order statistics at rank `p/100·(n-1)`.
    Linear,
    /// Smallest observed value whose empirical CDF reaches `p/100`.
    /// Depends only on the empirical distribution, so replicating every
    /// sample the same number of times leaves it unchanged.
    #[default]
    Observed,
}

/// Percentile of an ascending-sorted, non-empty sample.
pub fn percentile_sorted(sorted: &[f64], p: f64, method: PercentileMethod) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Empty("percentile of an empty sample"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::param(format!("percentile {p} not in [0, 100]")));
    }
    let n = sorted.len();
    let q = p / 100.0;
    Ok(match method {
        PercentileMethod::Linear => {
            let rank = q * (n - 1) as f64;
            let lo = rank.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = rank - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        }
        PercentileMethod::Observed => {
            // 1-based rank; the small slack absorbs representation error in q·n
            let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
            sorted[rank.min(n) - 1]
        }
    })
}

/// Percentile of an unsorted sample (NaNs sort last).
pub fn percentile(values: &[f64], p: f64, method: PercentileMethod) -> Result<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, p, method)
}
