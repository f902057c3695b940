use serde::{Deserialize, Serialize};

use crate::channel::{Basis, Channel, Intensity};

/// Detection counts split by intensity, Alice's state and Bob's channel.
///
/// Counts are `f64` so the analytic path can carry expected values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionTally {
    /// `[intensity][alice basis][alice bit][bob channel]`
    pub counts: [[[[f64; 4]; 2]; 2]; 3],
    /// Pulses sent per intensity.
    pub sent: [f64; 3],
}

impl DetectionTally {
    pub fn get(&self, intensity: Intensity, basis: Basis, bit: u8, channel: Channel) -> f64 {
        self.counts[intensity.index()][basis.index()][bit as usize][channel.index()]
    }

    pub fn add(&mut self, intensity: Intensity, basis: Basis, bit: u8, channel: Channel, n: f64) {
        self.counts[intensity.index()][basis.index()][bit as usize][channel.index()] += n;
    }

    pub fn add_sent(&mut self, intensity: Intensity, n: f64) {
        self.sent[intensity.index()] += n;
    }

    pub fn sent(&self, intensity: Intensity) -> f64 {
        self.sent[intensity.index()]
    }

    pub fn merge(&mut self, other: &DetectionTally) {
        for i in 0..3 {
            self.sent[i] += other.sent[i];
            for b in 0..2 {
                for a in 0..2 {
                    for c in 0..4 {
                        self.counts[i][b][a][c] += other.counts[i][b][a][c];
                    }
                }
            }
        }
    }

    /// Detections in `basis` when Alice also chose `basis`.
    pub fn sifted_in(&self, intensity: Intensity, basis: Basis) -> f64 {
        (0..2u8)
            .flat_map(|a| (0..2u8).map(move |j| (a, j)))
            .map(|(a, j)| self.get(intensity, basis, a, basis.channel(j)))
            .sum()
    }

    pub fn errors_in(&self, intensity: Intensity, basis: Basis) -> f64 {
        (0..2u8)
            .map(|a| self.get(intensity, basis, a, basis.channel(1 - a)))
            .sum()
    }

    pub fn sifted(&self, intensity: Intensity) -> f64 {
        Basis::ALL.iter().map(|&b| self.sifted_in(intensity, b)).sum()
    }

    pub fn errors(&self, intensity: Intensity) -> f64 {
        Basis::ALL.iter().map(|&b| self.errors_in(intensity, b)).sum()
    }

    /// Clicks of Bob's bit-`bit` detector in `basis` when Alice chose `basis`.
    pub fn clicks_in(&self, intensity: Intensity, basis: Basis, bit: u8) -> f64 {
        (0..2u8)
            .map(|a| self.get(intensity, basis, a, basis.channel(bit)))
            .sum()
    }

    /// Erroneous clicks of Bob's bit-`bit` detector in `basis`.
    pub fn error_clicks_in(&self, intensity: Intensity, basis: Basis, bit: u8) -> f64 {
        self.get(intensity, basis, 1 - bit, basis.channel(bit))
    }

    /// Pulses on which Alice chose `basis`, assuming a uniform basis choice.
    pub fn sent_in(&self, intensity: Intensity, _basis: Basis) -> f64 {
        0.5 * self.sent(intensity)
    }

    pub fn total_detections(&self) -> f64 {
        self.counts.iter().flatten().flatten().flatten().sum()
    }

    /// Move counts between each state's right and wrong detector so that the
    /// QBER of `intensity` equals `qber` in both bases. Sifted totals and
    /// other-basis clicks are unchanged.
    pub fn set_qber(&mut self, intensity: Intensity, qber: f64) {
        for basis in Basis::ALL {
            for a in 0..2u8 {
                let right = basis.channel(a);
                let wrong = basis.channel(1 - a);
                let total = self.get(intensity, basis, a, right) + self.get(intensity, basis, a, wrong);
                let cell = &mut self.counts[intensity.index()][basis.index()][a as usize];
                cell[right.index()] = (1.0 - qber) * total;
                cell[wrong.index()] = qber * total;
            }
        }
    }
}
