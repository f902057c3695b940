use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const REL_TOL: f64 = 1e-9;

/// Two-sided confidence interval on a Poisson mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChernoffInterval {
    pub observed: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Chernoff exponent `m − x + x·ln(x/m)` of observing `x` when the mean is `m`.
fn exponent(x: f64, m: f64) -> f64 {
    if x == 0.0 {
        m
    } else {
        m - x + x * (x / m).ln()
    }
}

/// Interval `[m_L, m_U]` around `observed` such that each tail has
/// probability at most `failure_prob/2`; the bounds solve
/// `m − x + x·ln(x/m) = ln(2/ε)` on either side of `x`.
pub fn chernoff_interval(observed: f64, failure_prob: f64) -> Result<ChernoffInterval> {
    if !(observed >= 0.0) || !observed.is_finite() {
        return Err(Error::Domain(format!(
            "observed count {observed} must be finite and >= 0"
        )));
    }
    if !(failure_prob > 0.0 && failure_prob < 1.0) {
        return Err(Error::Domain(format!(
            "failure probability {failure_prob} outside (0,1)"
        )));
    }
    let x = observed;
    let target = (2.0 / failure_prob).ln();

    // upper: exponent grows without bound for m > x
    let mut lo = x;
    let mut hi = x + target + (2.0 * x * target).sqrt() + 1.0;
    while exponent(x, hi) < target {
        hi *= 2.0;
    }
    let upper = bisect(|m| exponent(x, m) - target, lo, hi);

    let lower = if x == 0.0 || exponent(x, f64::MIN_POSITIVE) <= target {
        0.0
    } else {
        lo = f64::MIN_POSITIVE;
        hi = x;
        bisect(|m| target - exponent(x, m), lo, hi)
    };
    Ok(ChernoffInterval { observed, lower, upper })
}

/// Root of an increasing function on `[lo, hi]`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= REL_TOL * hi.abs() {
            break;
        }
    }
    0.5 * (lo + hi)
}
