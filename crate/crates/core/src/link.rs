//! Link budget: per-channel efficiency, count rate and noise rate.

use serde::{Deserialize, Serialize};

use crate::channel::{Channel, ChannelMap, Intensity};
use crate::config::{ReceiverConfig, SourceConfig};
use crate::error::{Error, Result};
use crate::geometry::{PassProfile, PassSample};

/// Elevations below this are rejected. The air-mass factor
/// `cscθ·(1 − 0.0012·cot²θ)` peaks at 3.44° and falls towards zero below it.
pub const MIN_MODEL_ELEVATION_RAD: f64 = 5.0 * std::f64::consts::PI / 180.0;

/// Link efficiency with a flag raised when the raw value exceeded 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Efficiency {
    pub eta: f64,
    pub clamped: bool,
}

/// Atmospheric transmittance `10^(−0.4·ϰ·cscθ·(1 − 0.0012·cot²θ))`.
pub fn atmospheric_transmittance(kappa: f64, elevation_rad: f64) -> f64 {
    let (s, c) = elevation_rad.sin_cos();
    let cot = c / s;
    10f64.powf(-0.4 * kappa / s * (1.0 - 0.0012 * cot * cot))
}

/// Fraction of the diverging beam collected by the telescope, `ε·D²/(γ·d)²`.
pub fn geometric_efficiency(rx: &ReceiverConfig, src: &SourceConfig, range_m: f64) -> f64 {
    let spot = src.divergence_rad * range_m;
    rx.obstruction * rx.aperture_m * rx.aperture_m / (spot * spot)
}

/// Overall link efficiency of one receiver channel at one pass sample.
pub fn channel_efficiency(
    sample: &PassSample,
    rx: &ReceiverConfig,
    src: &SourceConfig,
    channel: Channel,
) -> Result<Efficiency> {
    sample.validate()?;
    if sample.elevation_rad < MIN_MODEL_ELEVATION_RAD {
        return Err(Error::Validation(format!(
            "elevation {} rad below the 5° model floor",
            sample.elevation_rad
        )));
    }
    let raw = geometric_efficiency(rx, src, sample.range_m)
        * atmospheric_transmittance(rx.kappa, sample.elevation_rad)
        * rx.eta_opt.get(channel)
        * rx.eta_det;
    Ok(if raw > 1.0 {
        Efficiency {
            eta: 1.0,
            clamped: true,
        }
    } else {
        Efficiency {
            eta: raw,
            clamped: false,
        }
    })
}

/// Detection probability `1 − e^(−α·η)` of a coherent pulse.
pub fn detection_probability(mean_photons: f64, eta: f64) -> f64 {
    -(-mean_photons * eta).exp_m1()
}

/// Raw count rate of one channel: noise plus the signal, decoy and vacuum pulses.
pub fn count_rate(eta_xi: f64, rx: &ReceiverConfig, src: &SourceConfig, channel: Channel) -> f64 {
    let signal: f64 = Intensity::ALL
        .iter()
        .map(|&i| src.pulse_rate_hz * src.probability(i) * detection_probability(src.mean_photon_number(i), eta_xi))
        .sum();
    rx.p_channel.get(channel) * ((rx.sat_noise_t * eta_xi + rx.bg_noise_c) + signal)
}

/// Overall noise rate `T·η + C`.
pub fn noise_rate(eta_mean: f64, rx: &ReceiverConfig) -> f64 {
    rx.sat_noise_t * eta_mean + rx.bg_noise_c
}

/// Link efficiencies over a whole pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEfficiencySeries {
    pub t: Vec<f64>,
    pub eta: Vec<ChannelMap<f64>>,
    pub eta_mean: Vec<f64>,
    /// Set when any sample hit the η ≤ 1 clamp.
    pub clamped: bool,
}

impl ChannelEfficiencySeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

pub fn efficiency_series(
    profile: &PassProfile,
    rx: &ReceiverConfig,
    src: &SourceConfig,
) -> Result<ChannelEfficiencySeries> {
    let n = profile.len();
    let mut out = ChannelEfficiencySeries {
        t: Vec::with_capacity(n),
        eta: Vec::with_capacity(n),
        eta_mean: Vec::with_capacity(n),
        clamped: false,
    };
    for sample in profile.samples() {
        let mut etas = ChannelMap::splat(0.0);
        for c in Channel::ALL {
            let e = channel_efficiency(sample, rx, src, c)?;
            out.clamped |= e.clamped;
            etas.set(c, e.eta);
        }
        out.t.push(sample.t);
        out.eta_mean.push(etas.mean());
        out.eta.push(etas);
    }
    if out.clamped {
        log::warn!("link efficiency exceeded 1 and was clamped");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{reference_pass, PassSample};
    use std::f64::consts::FRAC_PI_2;

    fn sample(range_m: f64, elevation_deg: f64) -> PassSample {
        PassSample {
            t: 0.0,
            range_m,
            elevation_rad: elevation_deg.to_radians(),
        }
    }

    fn probe_receiver() -> ReceiverConfig {
        ReceiverConfig {
            eta_opt: ChannelMap::splat(0.27),
            ..ReceiverConfig::default()
        }
    }

    /// Σ_n e^(−α) αⁿ/n! · (1 − (1−η)ⁿ), summed until the terms vanish.
    fn poisson_mixture(alpha: f64, eta: f64) -> f64 {
        let mut term = (-alpha).exp();
        let mut total = 0.0;
        for n in 0..200 {
            if n > 0 {
                term *= alpha / n as f64;
            }
            total += term * (1.0 - (1.0 - eta).powi(n));
            if term < 1e-30 && n as f64 > alpha {
                break;
            }
        }
        total
    }

    #[test]
    fn zenith_without_extinction_is_pure_geometry() {
        let mut rx = probe_receiver();
        rx.kappa = 0.0;
        let src = SourceConfig::default();
        let s = PassSample {
            t: 0.0,
            range_m: 5e5,
            elevation_rad: FRAC_PI_2,
        };
        let e = channel_efficiency(&s, &rx, &src, Channel::H).unwrap();
        let expected = geometric_efficiency(&rx, &src, 5e5) * 0.27 * 0.6;
        assert_eq!(e.eta, expected);
        assert_eq!(atmospheric_transmittance(0.22, FRAC_PI_2), 10f64.powf(-0.4 * 0.22));
    }

    #[test]
    fn golden_efficiency_at_600_km() {
        let rx = probe_receiver();
        let src = SourceConfig::default();
        let e = channel_efficiency(&sample(600e3, 54.0), &rx, &src, Channel::D).unwrap();
        // 40-digit evaluation of the link equation
        let golden = 9.207_310_603_728_395_685e-4;
        assert!((e.eta - golden).abs() / golden < 1e-13, "{}", e.eta);
        assert!(!e.clamped);
    }

    #[test]
    fn doubling_range_quarters_efficiency() {
        let rx = probe_receiver();
        let src = SourceConfig::default();
        let a = channel_efficiency(&sample(600e3, 40.0), &rx, &src, Channel::V)
            .unwrap()
            .eta;
        let b = channel_efficiency(&sample(1200e3, 40.0), &rx, &src, Channel::V)
            .unwrap()
            .eta;
        assert!((a / b - 4.0).abs() < 1e-12);
    }

    #[test]
    fn absurd_inputs_clamp_with_flag() {
        let mut rx = probe_receiver();
        rx.aperture_m = 100.0;
        let src = SourceConfig::default();
        let e = channel_efficiency(&sample(1e3, 80.0), &rx, &src, Channel::A).unwrap();
        assert_eq!(e.eta, 1.0);
        assert!(e.clamped);
    }

    #[test]
    fn near_horizon_rejected() {
        let rx = probe_receiver();
        let src = SourceConfig::default();
        assert!(channel_efficiency(&sample(2e6, 0.3), &rx, &src, Channel::H).is_err());
        assert!(channel_efficiency(&sample(2e6, 4.9), &rx, &src, Channel::H).is_err());
    }

    #[test]
    fn zenith_is_the_best_elevation() {
        let rx = probe_receiver();
        let src = SourceConfig::default();
        let top = channel_efficiency(&sample(7e5, 90.0), &rx, &src, Channel::H)
            .unwrap()
            .eta;
        for el in [5.0, 10.0, 30.0, 60.0, 89.9] {
            let e = channel_efficiency(&sample(7e5, el), &rx, &src, Channel::H).unwrap().eta;
            assert!(top >= e);
        }
    }

    #[test]
    fn count_rate_background_only() {
        let rx = ReceiverConfig::default();
        let src = SourceConfig::default();
        assert_eq!(count_rate(0.0, &rx, &src, Channel::H), 0.25 * 290.0);
    }

    #[test]
    fn count_rate_matches_poisson_series_oracle() {
        let rx = ReceiverConfig::default();
        let src = SourceConfig::default();
        let eta = 9e-4;
        let oracle =
            0.25 * ((1.8e6 * eta + 290.0) + 1e8 * (0.5 * poisson_mixture(0.8, eta) + 0.25 * poisson_mixture(0.1, eta)));
        let got = count_rate(eta, &rx, &src, Channel::V);
        assert!((got - oracle).abs() / oracle < 1e-12, "{got} vs {oracle}");
        // high-precision value of the same expression
        assert!((got - 10_036.735_465_719_41).abs() < 1e-8);
    }

    #[test]
    fn detection_probability_matches_series_on_grid() {
        for i in 0..=20 {
            let alpha = i as f64 * 0.05;
            for j in 0..=20 {
                let eta = j as f64 * 5e-4;
                let d = (detection_probability(alpha, eta) - poisson_mixture(alpha, eta)).abs();
                assert!(d < 1e-12, "alpha={alpha} eta={eta} diff={d}");
            }
        }
    }

    #[test]
    fn count_rate_strictly_increasing() {
        let rx = ReceiverConfig::default();
        let src = SourceConfig::default();
        let mut prev = count_rate(0.0, &rx, &src, Channel::D);
        for k in 1..200 {
            let r = count_rate(k as f64 * 5e-3, &rx, &src, Channel::D);
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn noise_rate_values_and_affinity() {
        let rx = ReceiverConfig::default();
        assert_eq!(noise_rate(0.0, &rx), 290.0);
        assert!((noise_rate(1e-3, &rx) - 2090.0).abs() < 1e-9);
        let mut dark = rx.clone();
        dark.sat_noise_t = 0.0;
        assert_eq!(noise_rate(0.3, &dark), 290.0);
        for (a, x, y) in [(0.3, 1e-3, 4e-4), (0.9, 0.5, 0.0), (0.5, 1.0, 2e-3)] {
            let lhs = noise_rate(a * x + (1.0 - a) * y, &rx);
            let rhs = a * noise_rate(x, &rx) + (1.0 - a) * noise_rate(y, &rx);
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn series_single_sample_matches_pointwise() {
        let rx = ReceiverConfig::default();
        let src = SourceConfig::default();
        let s = sample(8e5, 35.0);
        let profile = PassProfile::new(vec![s], 1.0).unwrap();
        let series = efficiency_series(&profile, &rx, &src).unwrap();
        assert_eq!(series.len(), 1);
        for c in Channel::ALL {
            assert_eq!(series.eta[0].get(c), channel_efficiency(&s, &rx, &src, c).unwrap().eta);
        }
        let m = series.eta[0];
        assert!((series.eta_mean[0] - (m.h + m.v + m.d + m.a) / 4.0).abs() <= 1e-15);
    }

    #[test]
    fn rising_elevation_at_fixed_range_is_monotone() {
        let rx = ReceiverConfig::default();
        let src = SourceConfig::default();
        let samples: Vec<_> = (0..40)
            .map(|k| PassSample {
                t: k as f64,
                range_m: 9e5,
                elevation_rad: (20.0 + k as f64).to_radians(),
            })
            .collect();
        let s = efficiency_series(&PassProfile::new(samples, 1.0).unwrap(), &rx, &src).unwrap();
        for w in s.eta_mean.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn d_channel_beats_h_channel_on_reference_pass() {
        let s = efficiency_series(&reference_pass(), &ReceiverConfig::default(), &SourceConfig::default()).unwrap();
        assert!(s.eta.iter().all(|m| m.d >= m.h));
    }
}
