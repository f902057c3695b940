//! Source, receiver and run configuration.
//!
//! Defaults reproduce the Micius source and the Zvenigorod receiver: the
//! values of the published source, channel-efficiency and station tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelMap, Intensity};
use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-12;

/// Error probability implied by a polarisation contrast ratio `c:1`.
pub fn error_from_contrast(contrast: f64) -> f64 {
    1.0 / (contrast + 1.0)
}

/// Satellite transmitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Signal mean photon number.
    pub mu: f64,
    /// Decoy mean photon number.
    pub nu: f64,
    /// Vacuum mean photon number, always 0.
    #[serde(default)]
    pub lambda_vac: f64,
    pub p_s: f64,
    pub p_d: f64,
    pub p_v: f64,
    pub pulse_rate_hz: f64,
    /// Full beam divergence, radians.
    pub divergence_rad: f64,
    /// Mean transmitter polarisation error over the four states.
    pub tx_mean_error: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            mu: 0.8,
            nu: 0.1,
            lambda_vac: 0.0,
            p_s: 0.5,
            p_d: 0.25,
            p_v: 0.25,
            pulse_rate_hz: 1e8,
            divergence_rad: 1e-5,
            tx_mean_error: error_from_contrast(225.0),
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_s, self.p_d, self.p_v];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig("intensity probabilities must lie in [0,1]".into()));
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidConfig("p_s + p_d + p_v must equal 1".into()));
        }
        if !(0.0 <= self.nu && self.nu < self.mu) {
            return Err(Error::InvalidConfig("need 0 <= nu < mu".into()));
        }
        if self.lambda_vac != 0.0 {
            return Err(Error::InvalidConfig("lambda_vac must be 0".into()));
        }
        if !(self.pulse_rate_hz > 0.0) {
            return Err(Error::InvalidConfig("pulse_rate_hz must be positive".into()));
        }
        if !(self.divergence_rad > 0.0) {
            return Err(Error::InvalidConfig("divergence_rad must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.tx_mean_error) {
            return Err(Error::InvalidConfig("tx_mean_error must lie in [0, 0.5)".into()));
        }
        Ok(())
    }

    pub fn mean_photon_number(&self, intensity: Intensity) -> f64 {
        match intensity {
            Intensity::Signal => self.mu,
            Intensity::Decoy => self.nu,
            Intensity::Vacuum => self.lambda_vac,
        }
    }

    pub fn probability(&self, intensity: Intensity) -> f64 {
        match intensity {
            Intensity::Signal => self.p_s,
            Intensity::Decoy => self.p_d,
            Intensity::Vacuum => self.p_v,
        }
    }

    pub fn pulse_period_ns(&self) -> f64 {
        1e9 / self.pulse_rate_hz
    }
}

/// Ground station constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverConfig {
    /// Telescope diameter, meters.
    pub aperture_m: f64,
    /// Secondary-mirror obstruction factor.
    pub obstruction: f64,
    pub eta_opt: ChannelMap<f64>,
    pub eta_det: f64,
    pub p_channel: ChannelMap<f64>,
    /// Satellite-reflected sunlight coefficient, counts/s per unit link efficiency.
    pub sat_noise_t: f64,
    /// Constant background (stray light + dark counts), counts/s.
    pub bg_noise_c: f64,
    /// Atmospheric extinction coefficient.
    pub kappa: f64,
    pub filter_suppression: f64,
    pub filter_window_ns: f64,
    /// Clock-sync jitter of the detected signal, ns.
    #[serde(default = "default_sync_sigma")]
    pub sync_sigma_ns: f64,
    /// Where the signal peak sits inside the pulse period, ns.
    #[serde(default = "default_peak_offset")]
    pub peak_offset_ns: f64,
}

fn default_sync_sigma() -> f64 {
    0.5
}

fn default_peak_offset() -> f64 {
    6.0
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        ReceiverConfig {
            aperture_m: 0.6,
            obstruction: 0.73,
            eta_opt: ChannelMap {
                h: 0.21,
                v: 0.35,
                d: 0.37,
                a: 0.19,
            },
            eta_det: 0.6,
            p_channel: ChannelMap::splat(0.25),
            sat_noise_t: 1.8e6,
            bg_noise_c: 290.0,
            kappa: 0.22,
            filter_suppression: 5.0,
            filter_window_ns: 2.0,
            sync_sigma_ns: default_sync_sigma(),
            peak_offset_ns: default_peak_offset(),
        }
    }
}

impl ReceiverConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must lie in (0,1], got {v}")))
            }
        };
        unit("obstruction", self.obstruction)?;
        unit("eta_det", self.eta_det)?;
        for (c, v) in self.eta_opt.iter() {
            unit(&format!("eta_opt.{c}"), v)?;
        }
        if self.p_channel.iter().any(|(_, p)| !(0.0..=1.0).contains(&p))
            || (self.p_channel.sum() - 1.0).abs() > PROB_TOL
        {
            return Err(Error::InvalidConfig(
                "p_channel must be probabilities summing to 1".into(),
            ));
        }
        if !(self.aperture_m > 0.0) {
            return Err(Error::InvalidConfig("aperture_m must be positive".into()));
        }
        if self.kappa < 0.0 || self.sat_noise_t < 0.0 || self.bg_noise_c < 0.0 {
            return Err(Error::InvalidConfig(
                "kappa, sat_noise_t and bg_noise_c must be >= 0".into(),
            ));
        }
        if !(self.filter_suppression >= 1.0) {
            return Err(Error::InvalidConfig("filter_suppression must be >= 1".into()));
        }
        if !(self.filter_window_ns > 0.0) || !(self.sync_sigma_ns >= 0.0) {
            return Err(Error::InvalidConfig(
                "filter_window_ns > 0 and sync_sigma_ns >= 0 required".into(),
            ));
        }
        Ok(())
    }
}

/// Key-rate analysis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecurityConfig {
    pub f_ec: f64,
    /// Chernoff failure probability.
    pub epsilon: f64,
    /// Lower bound on η_z1/η_z0.
    pub eta_z: f64,
    /// Lower bound on η_x1/η_x0.
    pub eta_x: f64,
    pub p_z: f64,
}

impl Default for SecurityConfig {
    fn default() -> Self {
        SecurityConfig {
            f_ec: 1.44,
            epsilon: 1e-9,
            eta_z: 0.60,
            eta_x: 0.51,
            p_z: 0.5,
        }
    }
}

/// Synthetic-pass settings used when no ephemeris is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassConfig {
    pub altitude_m: f64,
    pub peak_elevation_deg: f64,
    /// Window length centred on the peak, seconds.
    pub duration_s: f64,
    pub step_s: f64,
    /// Samples below this elevation are excluded from simulation.
    pub min_operational_elevation_deg: f64,
}

impl Default for PassConfig {
    fn default() -> Self {
        PassConfig {
            altitude_m: 500e3,
            peak_elevation_deg: 54.0,
            duration_s: 220.0,
            step_s: 1.0,
            min_operational_elevation_deg: 20.0,
        }
    }
}

/// Full configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub source: SourceConfig,
    pub receiver: ReceiverConfig,
    pub security: SecurityConfig,
    pub pass: PassConfig,
    /// Receiver intrinsic error per channel when no series is supplied.
    pub intrinsic_error: ChannelMap<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl SimulationConfig {
    /// Bundled defaults; the receiver intrinsic error comes from the decoder
    /// contrast of 350:1.
    pub fn reference() -> Self {
        SimulationConfig {
            source: SourceConfig::default(),
            receiver: ReceiverConfig::default(),
            security: SecurityConfig::default(),
            pass: PassConfig::default(),
            intrinsic_error: ChannelMap::splat(error_from_contrast(350.0)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.receiver.validate()?;
        let s = &self.security;
        if !(s.f_ec >= 1.0) {
            return Err(Error::InvalidConfig("f_ec must be >= 1".into()));
        }
        if !(s.epsilon > 0.0 && s.epsilon < 1.0) {
            return Err(Error::InvalidConfig("epsilon must lie in (0,1)".into()));
        }
        if !(s.eta_z > 0.0 && s.eta_z <= 1.0 && s.eta_x > 0.0 && s.eta_x <= 1.0) {
            return Err(Error::InvalidConfig("eta_z and eta_x must lie in (0,1]".into()));
        }
        if !(0.0..=1.0).contains(&s.p_z) {
            return Err(Error::InvalidConfig("p_z must lie in [0,1]".into()));
        }
        if self.intrinsic_error.iter().any(|(_, e)| !(0.0..=0.5).contains(&e)) {
            return Err(Error::InvalidConfig("intrinsic_error must lie in [0,0.5]".into()));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: SimulationConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SimulationConfig::reference().validate().unwrap();
    }

    #[test]
    fn contrast_225_gives_1_over_226() {
        assert!((error_from_contrast(225.0) - 0.004_424_778_761_061_947).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip_and_partial_files() {
        let cfg = SimulationConfig::reference();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(SimulationConfig::from_json_str(&text).unwrap(), cfg);
        let partial = SimulationConfig::from_json_str(
            r#"{"security": {"f_ec": 1.2, "epsilon": 1e-10, "eta_z": 1, "eta_x": 1, "p_z": 0.5}}"#,
        )
        .unwrap();
        assert_eq!(partial.security.f_ec, 1.2);
        assert_eq!(partial.source, SourceConfig::default());
    }

    #[test]
    fn invalid_probabilities_rejected() {
        let mut cfg = SimulationConfig::reference();
        cfg.source.p_v = 0.3;
        assert!(cfg.validate().is_err());
        let mut cfg = SimulationConfig::reference();
        cfg.receiver.filter_suppression = 0.5;
        assert!(cfg.validate().is_err());
    }
}
