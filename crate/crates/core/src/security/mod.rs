//! Secret-key lengths: decoy-state finite-key bound and the detector-mismatch
//! bound, plus their combination over a whole pass.

mod chernoff;
mod decoy;
mod entropy;
mod mismatch;

use serde::{Deserialize, Serialize};

pub use chernoff::{chernoff_interval, ChernoffInterval};
pub use decoy::{decoy_bounds, decoy_key_length, DecoyBounds, DecoyCorners, DecoyStats, IntensityStats};
pub use entropy::binary_entropy;
pub use mismatch::{
    composed_mismatch_analysis, delta_terms, mismatch_analysis, mismatch_key_rate, BasisTerms, BitLabelling,
    DeltaTerms, MismatchAnalysis, MismatchParams,
};

use crate::channel::{Basis, Intensity};
use crate::config::{SecurityConfig, SourceConfig};
use crate::error::Result;
use crate::protocol::DetectionTally;

/// Mismatch analysis over the pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    /// Signal-state parameters (error-correction leakage).
    pub signal_params: MismatchParams,
    /// Single-photon parameters from the decoy bounds (privacy terms).
    pub single_photon_params: MismatchParams,
    pub labelling: BitLabelling,
    /// Single-photon share of signal sifted bits used for the scaling.
    pub single_photon_fraction: f64,
    /// The bound evaluated directly on signal statistics.
    pub signal_only: MismatchAnalysis,
    pub signal_only_key_bits: f64,
    /// Privacy terms from single-photon bounds, leakage from signal statistics.
    pub composed: MismatchAnalysis,
    pub composed_key_bits: f64,
    /// `t_x/t_z`; reported only, it does not enter the bound.
    pub t_xz: f64,
    /// The decoy/mismatch combination is an interpretation, not a derived result.
    pub composition_interpretive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyReport {
    /// Sifted bits over all intensities.
    pub sifted_total_bits: f64,
    pub sifted_signal_bits: f64,
    pub qber_signal: f64,
    pub qber_signal_z: f64,
    pub qber_signal_x: f64,
    pub decoy_stats: DecoyStats,
    pub decoy_bounds: DecoyBounds,
    pub decoy_key_bits: f64,
    pub mismatch: MismatchReport,
    pub mismatch_key_bits: f64,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

/// Both key-length analyses on the pass tally.
pub fn analyze(tally: &DetectionTally, src: &SourceConfig, sec: &SecurityConfig) -> Result<KeyReport> {
    let stats = DecoyStats::from_tally(tally, sec.epsilon);
    let bounds = decoy_bounds(&stats, src)?;
    let sifted_signal = stats.signal.sifted_bits;
    let qber_signal = if sifted_signal > 0.0 {
        stats.signal.error_bits / sifted_signal
    } else {
        0.0
    };
    let decoy_key_bits = decoy_key_length(&stats, &bounds, qber_signal, sec.f_ec)?;

    let (signal_params, labelling) =
        MismatchParams::from_tally(tally, Intensity::Signal, sec.eta_z, sec.eta_x, sec.p_z, sec.f_ec)?;
    let fraction = if sifted_signal > 0.0 {
        (bounds.n1_lower / sifted_signal).min(1.0)
    } else {
        0.0
    };
    let single = signal_params.single_photon(fraction, bounds.e1_upper);
    let signal_only = mismatch_analysis(&signal_params)?;
    let composed = composed_mismatch_analysis(&signal_params, &single)?;
    let pulses = stats.signal.sent_pulses;
    let mismatch = MismatchReport {
        signal_only_key_bits: signal_only.rate * pulses,
        composed_key_bits: composed.rate * pulses,
        t_xz: signal_params.transparency_x() / signal_params.transparency_z(),
        signal_params,
        single_photon_params: single,
        labelling,
        single_photon_fraction: fraction,
        signal_only,
        composed,
        composition_interpretive: true,
    };
    let mut diagnostics = bounds.diagnostics.clone();
    diagnostics.extend(mismatch.composed.diagnostics.iter().cloned());
    let sifted_in = |b| tally.sifted_in(Intensity::Signal, b);
    let qber_in = |b| {
        let s = sifted_in(b);
        if s > 0.0 {
            tally.errors_in(Intensity::Signal, b) / s
        } else {
            0.0
        }
    };
    Ok(KeyReport {
        sifted_total_bits: Intensity::ALL.iter().map(|&i| tally.sifted(i)).sum(),
        sifted_signal_bits: sifted_signal,
        qber_signal,
        qber_signal_z: qber_in(Basis::Z),
        qber_signal_x: qber_in(Basis::X),
        decoy_stats: stats,
        decoy_key_bits,
        mismatch_key_bits: mismatch.composed_key_bits,
        decoy_bounds: bounds,
        mismatch,
        diagnostics,
    })
}
