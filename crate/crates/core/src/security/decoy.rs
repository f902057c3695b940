//! Vacuum + weak decoy bounds on the single-photon sifted yield and error.
//!
//! With sifted gains `Q_α = n_α/N_α` and error gains `E_αQ_α = m_α/N_α`:
//!
//! ```text
//! Y1 ≥ μ/(μν − ν²)·[Q_ν·e^ν − Q_μ·e^μ·ν²/μ² − (μ² − ν²)/μ²·Y0]
//! e1 ≤ (E_νQ_ν·e^ν − e0Y0)/(Y1·ν)
//! ```
//!
//! Each count is replaced by the Chernoff corner that makes the bound worst:
//! `Q_ν` lower, `Q_μ` and `Y0` upper for Y1; `E_νQ_ν` upper and `e0Y0` lower
//! for e1.

use serde::{Deserialize, Serialize};

use super::chernoff::{chernoff_interval, ChernoffInterval};
use super::entropy;
use crate::channel::Intensity;
use crate::config::SourceConfig;
use crate::error::{Error, Result};
use crate::protocol::DetectionTally;

/// Counts of one intensity class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntensityStats {
    pub sent_pulses: f64,
    pub sifted_bits: f64,
    pub error_bits: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyStats {
    pub signal: IntensityStats,
    pub decoy: IntensityStats,
    pub vacuum: IntensityStats,
    pub failure_prob: f64,
}

impl DecoyStats {
    pub fn from_tally(tally: &DetectionTally, failure_prob: f64) -> Self {
        let stats = |i| IntensityStats {
            sent_pulses: tally.sent(i),
            sifted_bits: tally.sifted(i),
            error_bits: tally.errors(i),
        };
        DecoyStats {
            signal: stats(Intensity::Signal),
            decoy: stats(Intensity::Decoy),
            vacuum: stats(Intensity::Vacuum),
            failure_prob,
        }
    }

    pub fn get(&self, intensity: Intensity) -> &IntensityStats {
        match intensity {
            Intensity::Signal => &self.signal,
            Intensity::Decoy => &self.decoy,
            Intensity::Vacuum => &self.vacuum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in Intensity::ALL {
            let s = self.get(i);
            if !(s.sent_pulses > 0.0) {
                return Err(Error::InfeasibleStatistics(format!("no {i} pulses sent")));
            }
            if !(0.0 <= s.error_bits && s.error_bits <= s.sifted_bits && s.sifted_bits <= s.sent_pulses) {
                return Err(Error::InfeasibleStatistics(format!(
                    "{i}: need 0 <= errors <= sifted <= sent"
                )));
            }
        }
        if !(self.failure_prob > 0.0 && self.failure_prob < 1.0) {
            return Err(Error::InfeasibleStatistics("failure probability outside (0,1)".into()));
        }
        Ok(())
    }
}

/// Chernoff corners used by the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyCorners {
    pub signal_sifted: ChernoffInterval,
    pub decoy_sifted: ChernoffInterval,
    pub vacuum_sifted: ChernoffInterval,
    pub decoy_errors: ChernoffInterval,
    pub vacuum_errors: ChernoffInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    pub y1_lower: f64,
    pub e1_upper: f64,
    /// Lower bound on single-photon sifted bits among signal pulses.
    pub n1_lower: f64,
    pub corners: DecoyCorners,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

/// Bounds on the single-photon yield and error rate.
pub fn decoy_bounds(stats: &DecoyStats, src: &SourceConfig) -> Result<DecoyBounds> {
    stats.validate()?;
    let (mu, nu) = (src.mu, src.nu);
    if !(nu > 0.0 && nu < mu) {
        return Err(Error::InfeasibleStatistics(format!(
            "need 0 < ν < μ (ν = {nu}, μ = {mu})"
        )));
    }
    let eps = stats.failure_prob;
    let corners = DecoyCorners {
        signal_sifted: chernoff_interval(stats.signal.sifted_bits, eps)?,
        decoy_sifted: chernoff_interval(stats.decoy.sifted_bits, eps)?,
        vacuum_sifted: chernoff_interval(stats.vacuum.sifted_bits, eps)?,
        decoy_errors: chernoff_interval(stats.decoy.error_bits, eps)?,
        vacuum_errors: chernoff_interval(stats.vacuum.error_bits, eps)?,
    };
    let q_mu = corners.signal_sifted.upper / stats.signal.sent_pulses;
    let q_nu = corners.decoy_sifted.lower / stats.decoy.sent_pulses;
    let y0 = (corners.vacuum_sifted.upper / stats.vacuum.sent_pulses).min(1.0);
    let eq_nu = corners.decoy_errors.upper / stats.decoy.sent_pulses;
    let e0y0 = corners.vacuum_errors.lower / stats.vacuum.sent_pulses;

    let mut diagnostics = Vec::new();
    let y1 = mu / (mu * nu - nu * nu)
        * (q_nu * nu.exp() - q_mu * mu.exp() * nu * nu / (mu * mu) - (mu * mu - nu * nu) / (mu * mu) * y0);
    let (y1_lower, e1_upper) = if y1 > 0.0 {
        let e1 = (eq_nu * nu.exp() - e0y0) / (y1 * nu);
        if e1 > 0.5 {
            diagnostics.push(format!("single-photon error bound {e1:.4} capped at 0.5"));
        }
        (y1.min(1.0), e1.clamp(0.0, 0.5))
    } else {
        diagnostics.push(format!("single-photon yield bound {y1:.3e} <= 0, reported as 0"));
        (0.0, 0.5)
    };
    for d in &diagnostics {
        log::warn!("{d}");
    }
    Ok(DecoyBounds {
        y1_lower,
        e1_upper,
        n1_lower: stats.signal.sent_pulses * mu * (-mu).exp() * y1_lower,
        corners,
        diagnostics,
    })
}

/// Secret bits `n1·(1 − h(e1)) − f_ec·n_sift·h(Q)`, clamped at zero.
pub fn decoy_key_length(stats: &DecoyStats, bounds: &DecoyBounds, qber_signal: f64, f_ec: f64) -> Result<f64> {
    let privacy = bounds.n1_lower * (1.0 - entropy::binary_entropy(bounds.e1_upper)?);
    let leak = f_ec * stats.signal.sifted_bits * entropy::binary_entropy(qber_signal)?;
    let key = privacy - leak;
    if key < 0.0 {
        log::warn!("decoy key length {key:.0} negative, clamped to 0");
    }
    Ok(key.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    /// Photon-number resolved truth: yields `y[n]` and error rates `e[n]`.
    struct Truth {
        y: Vec<f64>,
        e: Vec<f64>,
    }

    impl Truth {
        fn gain(&self, alpha: f64) -> (f64, f64) {
            let mut p = (-alpha).exp();
            let (mut q, mut eq) = (0.0, 0.0);
            for n in 0..self.y.len() {
                if n > 0 {
                    p *= alpha / n as f64;
                }
                q += p * self.y[n];
                eq += p * self.y[n] * self.e[n];
            }
            (q, eq)
        }
    }

    fn sample_stats(truth: &Truth, src: &SourceConfig, pulses: f64, rng: &mut ChaCha8Rng) -> DecoyStats {
        let mut draw = |mean: f64| {
            if mean > 0.0 {
                Poisson::new(mean).unwrap().sample(rng)
            } else {
                0.0
            }
        };
        let mut class = |alpha: f64, p: f64| {
            let (q, eq) = truth.gain(alpha);
            let n = pulses * p;
            let err = draw(n * eq);
            let good = draw(n * (q - eq));
            IntensityStats {
                sent_pulses: n,
                sifted_bits: err + good,
                error_bits: err,
            }
        };
        DecoyStats {
            signal: class(src.mu, src.p_s),
            decoy: class(src.nu, src.p_d),
            vacuum: class(0.0, src.p_v),
            failure_prob: 1e-9,
        }
    }

    #[test]
    fn bounds_are_sound_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..100 {
            let src = SourceConfig {
                mu: rng.random_range(0.3..1.0),
                nu: rng.random_range(0.02..0.25),
                ..SourceConfig::default()
            };
            let eta: f64 = 10f64.powf(rng.random_range(-3.5..-1.0));
            let y0: f64 = 10f64.powf(rng.random_range(-7.0..-4.0));
            let e_d: f64 = rng.random_range(0.0..0.05);
            // random multi-photon behaviour, independent of any channel model
            let mut y = vec![y0];
            let mut e = vec![0.5];
            for n in 1..30 {
                let lossy = 1.0 - (1.0 - y0) * (1.0 - eta).powi(n);
                let tweak = rng.random_range(0.5..1.5);
                y.push((lossy * if n == 1 { 1.0 } else { tweak }).min(1.0));
                e.push(if n == 1 {
                    (y0 * 0.5 + e_d * eta) / (y0 + eta)
                } else {
                    rng.random_range(0.0..0.5)
                });
            }
            let truth = Truth { y, e };
            let pulses = 10f64.powf(rng.random_range(8.0..11.0));
            let stats = sample_stats(&truth, &src, pulses, &mut rng);
            let b = decoy_bounds(&stats, &src).unwrap();
            assert!(
                b.y1_lower <= truth.y[1],
                "trial {trial}: Y1 {} > {}",
                b.y1_lower,
                truth.y[1]
            );
            assert!(
                b.e1_upper >= truth.e[1],
                "trial {trial}: e1 {} < {}",
                b.e1_upper,
                truth.e[1]
            );
        }
    }

    #[test]
    fn vacuum_only_gives_zero_yield() {
        let only_background = IntensityStats {
            sent_pulses: 1e9,
            sifted_bits: 100.0,
            error_bits: 50.0,
        };
        let stats = DecoyStats {
            signal: only_background,
            decoy: only_background,
            vacuum: only_background,
            failure_prob: 1e-9,
        };
        let b = decoy_bounds(&stats, &SourceConfig::default()).unwrap();
        assert_eq!(b.y1_lower, 0.0);
        assert_eq!(b.n1_lower, 0.0);
        assert!(!b.diagnostics.is_empty());
    }

    #[test]
    fn invalid_stats_rejected() {
        let s = IntensityStats {
            sent_pulses: 10.0,
            sifted_bits: 5.0,
            error_bits: 6.0,
        };
        let stats = DecoyStats {
            signal: s,
            decoy: s,
            vacuum: s,
            failure_prob: 1e-9,
        };
        assert!(matches!(
            decoy_bounds(&stats, &SourceConfig::default()),
            Err(Error::InfeasibleStatistics(_))
        ));
        let mut src = SourceConfig::default();
        src.nu = 0.9;
        let ok = IntensityStats {
            sent_pulses: 10.0,
            sifted_bits: 5.0,
            error_bits: 1.0,
        };
        let stats = DecoyStats {
            signal: ok,
            decoy: ok,
            vacuum: ok,
            failure_prob: 1e-9,
        };
        assert!(decoy_bounds(&stats, &src).is_err());
    }

    #[test]
    fn key_length_edge_cases() {
        let signal = IntensityStats {
            sent_pulses: 1e9,
            sifted_bits: 1e6,
            error_bits: 0.0,
        };
        let stats = DecoyStats {
            signal,
            decoy: signal,
            vacuum: signal,
            failure_prob: 1e-9,
        };
        let corners = {
            let c = chernoff_interval(1.0, 1e-9).unwrap();
            DecoyCorners {
                signal_sifted: c,
                decoy_sifted: c,
                vacuum_sifted: c,
                decoy_errors: c,
                vacuum_errors: c,
            }
        };
        let mut b = DecoyBounds {
            y1_lower: 1e-3,
            e1_upper: 0.0,
            n1_lower: 1e6,
            corners,
            diagnostics: vec![],
        };
        assert_eq!(decoy_key_length(&stats, &b, 0.0, 1.44).unwrap(), 1e6);
        b.e1_upper = 0.5;
        assert_eq!(decoy_key_length(&stats, &b, 0.0, 1.44).unwrap(), 0.0);
        b.e1_upper = 0.0;
        assert_eq!(decoy_key_length(&stats, &b, 0.3, 1.44).unwrap(), 0.0);
    }
}
