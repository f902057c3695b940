use serde::{Deserialize, Serialize};

use super::DetectionRecord;
use crate::error::{Error, Result};
use crate::fitting::{least_squares, LsqOptions};

/// Histograms whose tallest bin is less than this multiple of the median bin
/// have no usable sync peak.
pub const SYNC_MIN_PEAK_TO_FLOOR: f64 = 2.0;

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Circular distance between two phases on a period.
fn phase_distance(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

/// Keep events whose folded timestamp lies within `window/2` of `center`.
pub fn temporal_filter(
    events: &[DetectionRecord],
    window_ns: f64,
    center_ns: f64,
    period_ns: f64,
) -> Result<Vec<DetectionRecord>> {
    if !(window_ns > 0.0) || !(period_ns > 0.0) {
        return Err(Error::InvalidParams("filter window and period must be positive".into()));
    }
    if window_ns >= period_ns {
        return Ok(events.to_vec());
    }
    Ok(events
        .iter()
        .filter(|e| phase_distance(e.timestamp_ns, center_ns, period_ns) <= 0.5 * window_ns)
        .copied()
        .collect())
}

/// Fraction of a Gaussian arrival-time distribution (folded on the period)
/// that falls inside the filter window.
pub fn gaussian_window_fraction(offset_ns: f64, sigma_ns: f64, center_ns: f64, window_ns: f64, period_ns: f64) -> f64 {
    if window_ns >= period_ns {
        return 1.0;
    }
    if sigma_ns <= 0.0 {
        return if phase_distance(offset_ns, center_ns, period_ns) <= 0.5 * window_ns {
            1.0
        } else {
            0.0
        };
    }
    let reach = (10.0 * sigma_ns / period_ns).ceil() as i64 + 1;
    (-reach..=reach)
        .map(|k| {
            let lo = center_ns - 0.5 * window_ns + k as f64 * period_ns - offset_ns;
            let hi = lo + window_ns;
            normal_cdf(hi / sigma_ns) - normal_cdf(lo / sigma_ns)
        })
        .sum()
}

/// Folded arrival-time histogram with a Gaussian-plus-floor fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncFit {
    pub bin_ns: f64,
    /// Counts per bin, starting at phase 0.
    pub counts: Vec<f64>,
    pub mean_ns: f64,
    pub sigma_ns: f64,
    /// Events under the Gaussian.
    pub amplitude: f64,
    /// Background counts per bin.
    pub floor: f64,
    pub peak_to_floor: f64,
}

/// Fold timestamps modulo the pulse period and fit the sync peak.
pub fn sync_histogram<I>(timestamps: I, period_ns: f64, bin_ns: f64) -> Result<SyncFit>
where
    I: IntoIterator<Item = f64>,
{
    if !(bin_ns > 0.0) || !(period_ns > 0.0) || bin_ns > period_ns {
        return Err(Error::InvalidParams("bin width must lie in (0, period]".into()));
    }
    let n = ((period_ns / bin_ns).round() as usize).max(1);
    let bin = period_ns / n as f64;
    let mut counts = vec![0.0; n];
    for t in timestamps {
        let k = ((t.rem_euclid(period_ns) / bin) as usize).min(n - 1);
        counts[k] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(Error::FitFailed("no events to histogram".into()));
    }

    let mut sorted = counts.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[n / 2];
    let (peak_bin, peak) =
        counts.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (k, c)| if c > acc.1 { (k, c) } else { acc },
        );
    let ratio = if median > 0.0 { peak / median } else { f64::INFINITY };
    if ratio < SYNC_MIN_PEAK_TO_FLOOR {
        return Err(Error::FitFailed(format!(
            "no dominant sync peak (peak/floor = {ratio:.2})"
        )));
    }

    // rotate so the peak sits mid-window and the Gaussian does not wrap
    let shift = (peak_bin + n - n / 2) % n;
    let rotated: Vec<f64> = (0..n).map(|k| counts[(k + shift) % n]).collect();
    let excess: Vec<f64> = rotated.iter().map(|c| (c - median).max(0.0)).collect();
    let mass: f64 = excess.iter().sum::<f64>().max(1.0);
    let centre = |k: usize| (k as f64 + 0.5) * bin;
    let m0 = excess.iter().enumerate().map(|(k, e)| e * centre(k)).sum::<f64>() / mass;
    let var = excess
        .iter()
        .enumerate()
        .map(|(k, e)| e * (centre(k) - m0).powi(2))
        .sum::<f64>()
        / mass;
    let s0 = var.sqrt().clamp(0.5 * bin, 0.25 * period_ns);

    let model = |p: &[f64], k: usize| {
        let lo = (k as f64 * bin - p[0]) / p[1];
        let hi = ((k + 1) as f64 * bin - p[0]) / p[1];
        p[3] + p[2] * (normal_cdf(hi) - normal_cdf(lo))
    };
    let residuals = |p: &[f64]| -> Vec<f64> {
        rotated
            .iter()
            .enumerate()
            .map(|(k, &c)| (model(p, k) - c) / c.max(1.0).sqrt())
            .collect()
    };
    let opts = LsqOptions::bounded(
        vec![0.0, 1e-3 * bin, 0.0, 0.0],
        vec![period_ns, period_ns, 2.0 * total, peak],
    );
    let init = [m0, s0, mass.min(2.0 * total), median.min(peak)];
    let sol = least_squares(residuals, &init, &opts).map_err(|e| Error::FitFailed(format!("sync peak fit: {e}")))?;

    Ok(SyncFit {
        bin_ns: bin,
        counts,
        mean_ns: (sol.params[0] + shift as f64 * bin).rem_euclid(period_ns),
        sigma_ns: sol.params[1],
        amplitude: sol.params[2],
        floor: sol.params[3],
        peak_to_floor: ratio,
    })
}
