//! Key rate with detector-efficiency mismatch.
//!
//! Per basis `b` the bound is
//!
//! ```text
//! p_b²·p_det^b·[h((1 − δ_bb)/2) − h((1 − √(δ_bb² + δ_bb'²))/2) − f_ec·h(Q_b)]
//! ```
//!
//! with `t_b = p_{b,0} + p_{b,1}/η_b`, `δ_bb = (p_{b,0} − p_{b,1})/p_det^b` and
//! `δ_bb' = √η_b·(t_b − 2·q_b')/p_det^b`, where `b'` is the other basis.

use serde::{Deserialize, Serialize};

use super::entropy::h;
use crate::channel::{Basis, Intensity};
use crate::error::{Error, Result};
use crate::protocol::DetectionTally;

const DELTA_TOL: f64 = 1e-9;
const SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MismatchParams {
    pub p_z: f64,
    pub p_x: f64,
    pub p_det_z: f64,
    pub p_det_x: f64,
    pub q_z_bit0: f64,
    pub q_z_bit1: f64,
    pub q_x_bit0: f64,
    pub q_x_bit1: f64,
    /// η_z1/η_z0, a lower bound in (0, 1].
    pub eta_z: f64,
    pub eta_x: f64,
    pub qber_z: f64,
    pub qber_x: f64,
    /// Weighted erroneous detection rate: erroneous 1s weighted by 1/η_z.
    pub q_err_z: f64,
    pub q_err_x: f64,
    pub f_ec: f64,
}

/// Which physical detector carries logical bit 0 in each basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitLabelling {
    pub z_swapped: bool,
    pub x_swapped: bool,
}

impl BitLabelling {
    fn swapped(&self, b: Basis) -> bool {
        match b {
            Basis::Z => self.z_swapped,
            Basis::X => self.x_swapped,
        }
    }
}

impl MismatchParams {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.p_z,
            self.p_x,
            self.p_det_z,
            self.p_det_x,
            self.q_z_bit0,
            self.q_z_bit1,
            self.q_x_bit0,
            self.q_x_bit1,
            self.qber_z,
            self.qber_x,
            self.q_err_z,
            self.q_err_x,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParams("probabilities must lie in [0,1]".into()));
        }
        for eta in [self.eta_z, self.eta_x] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::InvalidParams(format!("efficiency ratio {eta} outside (0,1]")));
            }
        }
        if (self.p_det_z - self.q_z_bit0 - self.q_z_bit1).abs() > SUM_TOL
            || (self.p_det_x - self.q_x_bit0 - self.q_x_bit1).abs() > SUM_TOL
        {
            return Err(Error::InvalidParams(
                "p_det must equal the sum of the click probabilities".into(),
            ));
        }
        if !(self.f_ec >= 1.0) {
            return Err(Error::InvalidParams(format!("f_ec = {} below 1", self.f_ec)));
        }
        Ok(())
    }

    /// Pass-aggregate parameters of one intensity class. In each basis the
    /// detector with more clicks is taken as the more efficient one and
    /// labelled bit 0, so that the efficiency ratios are ≤ 1.
    pub fn from_tally(
        tally: &DetectionTally,
        intensity: Intensity,
        eta_z: f64,
        eta_x: f64,
        p_z: f64,
        f_ec: f64,
    ) -> Result<(Self, BitLabelling)> {
        let labelling = BitLabelling {
            z_swapped: tally.clicks_in(intensity, Basis::Z, 1) > tally.clicks_in(intensity, Basis::Z, 0),
            x_swapped: tally.clicks_in(intensity, Basis::X, 1) > tally.clicks_in(intensity, Basis::X, 0),
        };
        let per_basis = |b: Basis, eta: f64| -> Result<(f64, f64, f64, f64)> {
            let sent = tally.sent_in(intensity, b);
            if !(sent > 0.0) {
                return Err(Error::DivisionByZero("pulses sent in basis"));
            }
            let phys = |bit: u8| if labelling.swapped(b) { 1 - bit } else { bit };
            let p0 = tally.clicks_in(intensity, b, phys(0)) / sent;
            let p1 = tally.clicks_in(intensity, b, phys(1)) / sent;
            let q = (tally.error_clicks_in(intensity, b, phys(0)) + tally.error_clicks_in(intensity, b, phys(1)) / eta)
                / sent;
            let sifted = tally.sifted_in(intensity, b);
            let qber = if sifted > 0.0 {
                tally.errors_in(intensity, b) / sifted
            } else {
                0.0
            };
            Ok((p0, p1, q, qber))
        };
        let (z0, z1, qz, qber_z) = per_basis(Basis::Z, eta_z)?;
        let (x0, x1, qx, qber_x) = per_basis(Basis::X, eta_x)?;
        let m = MismatchParams {
            p_z,
            p_x: 1.0 - p_z,
            p_det_z: z0 + z1,
            p_det_x: x0 + x1,
            q_z_bit0: z0,
            q_z_bit1: z1,
            q_x_bit0: x0,
            q_x_bit1: x1,
            eta_z,
            eta_x,
            qber_z,
            qber_x,
            q_err_z: qz,
            q_err_x: qx,
            f_ec,
        };
        m.validate()?;
        Ok((m, labelling))
    }

    /// Single-photon counterpart: click probabilities scaled by `fraction`
    /// (single-photon share of detections) and errors at rate `e1`, so that
    /// `q_b = e1·t_b`.
    pub fn single_photon(&self, fraction: f64, e1: f64) -> Self {
        let s = fraction.clamp(0.0, 1.0);
        let mut m = *self;
        m.q_z_bit0 *= s;
        m.q_z_bit1 *= s;
        m.q_x_bit0 *= s;
        m.q_x_bit1 *= s;
        m.p_det_z = m.q_z_bit0 + m.q_z_bit1;
        m.p_det_x = m.q_x_bit0 + m.q_x_bit1;
        m.qber_z = e1;
        m.qber_x = e1;
        m.q_err_z = e1 * (m.q_z_bit0 + m.q_z_bit1 / m.eta_z);
        m.q_err_x = e1 * (m.q_x_bit0 + m.q_x_bit1 / m.eta_x);
        m
    }

    /// Parameters with the roles of Z and X exchanged.
    pub fn swapped_bases(&self) -> Self {
        MismatchParams {
            p_z: self.p_x,
            p_x: self.p_z,
            p_det_z: self.p_det_x,
            p_det_x: self.p_det_z,
            q_z_bit0: self.q_x_bit0,
            q_z_bit1: self.q_x_bit1,
            q_x_bit0: self.q_z_bit0,
            q_x_bit1: self.q_z_bit1,
            eta_z: self.eta_x,
            eta_x: self.eta_z,
            qber_z: self.qber_x,
            qber_x: self.qber_z,
            q_err_z: self.q_err_x,
            q_err_x: self.q_err_z,
            f_ec: self.f_ec,
        }
    }

    pub fn transparency_z(&self) -> f64 {
        self.q_z_bit0 + self.q_z_bit1 / self.eta_z
    }

    pub fn transparency_x(&self) -> f64 {
        self.q_x_bit0 + self.q_x_bit1 / self.eta_x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaTerms {
    pub zz: f64,
    pub zx: f64,
    pub xx: f64,
    pub xz: f64,
}

pub fn delta_terms(m: &MismatchParams) -> Result<DeltaTerms> {
    if m.p_det_z == 0.0 {
        return Err(Error::DivisionByZero("p_det_z"));
    }
    if m.p_det_x == 0.0 {
        return Err(Error::DivisionByZero("p_det_x"));
    }
    Ok(DeltaTerms {
        zz: (m.q_z_bit0 - m.q_z_bit1) / m.p_det_z,
        zx: m.eta_z.sqrt() * (m.transparency_z() - 2.0 * m.q_err_x) / m.p_det_z,
        xx: (m.q_x_bit0 - m.q_x_bit1) / m.p_det_x,
        xz: m.eta_x.sqrt() * (m.transparency_x() - 2.0 * m.q_err_z) / m.p_det_x,
    })
}

/// Entropy terms of one basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisTerms {
    /// `h((1 − δ_bb)/2)`
    pub h_same: f64,
    /// `√(δ_bb² + δ_bb'²)` after capping at 1.
    pub norm: f64,
    /// `h((1 − norm)/2)`
    pub h_cross: f64,
    /// `h(Q_b)`
    pub h_qber: f64,
    /// `h_same − h_cross`
    pub privacy: f64,
    /// Unclamped contribution `p_b²·p_det^b·[privacy − f_ec·h(Q_b)]`.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchAnalysis {
    pub deltas: DeltaTerms,
    pub z: BasisTerms,
    pub x: BasisTerms,
    /// Key per emitted pulse, clamped at 0.
    pub rate: f64,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
fn basis_terms(
    same: f64,
    cross: f64,
    p_b: f64,
    p_det: f64,
    qber: f64,
    f_ec: f64,
    label: &str,
    diagnostics: &mut Vec<String>,
) -> BasisTerms {
    let raw = same.hypot(cross);
    if raw > 1.0 {
        diagnostics.push(format!("{label}: δ norm {raw:.12} capped at 1"));
    }
    let norm = raw.min(1.0);
    let h_same = h(0.5 * (1.0 - same));
    let h_cross = h(0.5 * (1.0 - norm));
    let h_qber = h(qber);
    let privacy = h_same - h_cross;
    BasisTerms {
        h_same,
        norm,
        h_cross,
        h_qber,
        privacy,
        contribution: p_b * p_b * p_det * (privacy - f_ec * h_qber),
    }
}

fn check_deltas(d: &DeltaTerms) -> Result<()> {
    for (name, v) in [("zz", d.zz), ("zx", d.zx), ("xx", d.xx), ("xz", d.xz)] {
        if !v.is_finite() || v.abs() > 1.0 + DELTA_TOL {
            return Err(Error::InvalidParams(format!("|δ_{name}| = {} exceeds 1", v.abs())));
        }
    }
    Ok(())
}

/// Full breakdown of the mismatch bound for one parameter set.
pub fn mismatch_analysis(m: &MismatchParams) -> Result<MismatchAnalysis> {
    m.validate()?;
    let deltas = delta_terms(m)?;
    check_deltas(&deltas)?;
    let mut diagnostics = Vec::new();
    let z = basis_terms(
        deltas.zz,
        deltas.zx,
        m.p_z,
        m.p_det_z,
        m.qber_z,
        m.f_ec,
        "Z",
        &mut diagnostics,
    );
    let x = basis_terms(
        deltas.xx,
        deltas.xz,
        m.p_x,
        m.p_det_x,
        m.qber_x,
        m.f_ec,
        "X",
        &mut diagnostics,
    );
    let total = z.contribution + x.contribution;
    if total < 0.0 {
        diagnostics.push(format!("mismatch key rate {total:.3e} negative, clamped to 0"));
    }
    for d in &diagnostics {
        log::warn!("{d}");
    }
    Ok(MismatchAnalysis {
        deltas,
        z,
        x,
        rate: total.max(0.0),
        diagnostics,
    })
}

/// Secret key per emitted pulse, clamped below at 0.
pub fn mismatch_key_rate(m: &MismatchParams) -> Result<f64> {
    Ok(mismatch_analysis(m)?.rate)
}

/// Mismatch bound with the privacy terms taken from single-photon parameters
/// and error-correction leakage from the observed signal statistics.
pub fn composed_mismatch_analysis(signal: &MismatchParams, single: &MismatchParams) -> Result<MismatchAnalysis> {
    signal.validate()?;
    single.validate()?;
    let mut diagnostics = Vec::new();
    if single.p_det_z == 0.0 || single.p_det_x == 0.0 {
        diagnostics.push("no single-photon detections bounded; privacy terms are 0".into());
        let zero = BasisTerms {
            h_same: 0.0,
            norm: 0.0,
            h_cross: 0.0,
            h_qber: 0.0,
            privacy: 0.0,
            contribution: 0.0,
        };
        return Ok(MismatchAnalysis {
            deltas: DeltaTerms {
                zz: 0.0,
                zx: 0.0,
                xx: 0.0,
                xz: 0.0,
            },
            z: zero,
            x: zero,
            rate: 0.0,
            diagnostics,
        });
    }
    let deltas = delta_terms(single)?;
    check_deltas(&deltas)?;
    let mut z = basis_terms(
        deltas.zz,
        deltas.zx,
        single.p_z,
        single.p_det_z,
        0.0,
        0.0,
        "Z",
        &mut diagnostics,
    );
    let mut x = basis_terms(
        deltas.xx,
        deltas.xz,
        single.p_x,
        single.p_det_x,
        0.0,
        0.0,
        "X",
        &mut diagnostics,
    );
    z.h_qber = h(signal.qber_z);
    x.h_qber = h(signal.qber_x);
    z.contribution -= signal.p_z * signal.p_z * signal.p_det_z * signal.f_ec * z.h_qber;
    x.contribution -= signal.p_x * signal.p_x * signal.p_det_x * signal.f_ec * x.h_qber;
    let total = z.contribution + x.contribution;
    if total < 0.0 {
        diagnostics.push(format!("composed mismatch key rate {total:.3e} negative, clamped to 0"));
    }
    for d in &diagnostics {
        log::warn!("{d}");
    }
    Ok(MismatchAnalysis {
        deltas,
        z,
        x,
        rate: total.max(0.0),
        diagnostics,
    })
}
