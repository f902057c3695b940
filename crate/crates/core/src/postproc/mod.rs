//! Key post-processing: sifting, leakage accounting, privacy amplification and
//! one-time-pad transfer.

mod otp;
mod toeplitz;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use otp::{otp_decrypt, otp_encrypt, KeyStore, KEY_HEADER_LEN, KEY_MAGIC, KEY_VERSION};
pub use toeplitz::{privacy_amplify, PaSeed};

use crate::error::{Error, Result};
use crate::protocol::{DetectionRecord, DetectionTally};
use crate::security::binary_entropy;

/// Ordered bit sequence, one bit per element.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BitString {
    bits: Vec<u8>,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros(len: usize) -> Self {
        BitString { bits: vec![0; len] }
    }

    /// Build from values that must all be 0 or 1.
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Validation("bit values must be 0 or 1".into()));
        }
        Ok(BitString { bits })
    }

    /// Uniformly random bits from a seeded generator.
    pub fn random(len: usize, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BitString {
            bits: (0..len).map(|_| rng.random::<bool>() as u8).collect(),
        }
    }

    /// Unpack the first `len` bits of `bytes`, most significant bit first.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if len > 8 * bytes.len() {
            return Err(Error::DimensionMismatch(format!(
                "{len} bits requested from {} bytes",
                bytes.len()
            )));
        }
        Ok(BitString {
            bits: (0..len).map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1).collect(),
        })
    }

    /// Pack most significant bit first; the last byte is zero padded.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, &b) in self.bits.iter().enumerate() {
            out[i / 8] |= b << (7 - i % 8);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> u8 {
        self.bits[i]
    }

    pub fn push(&mut self, bit: u8) {
        self.bits.push(bit & 1);
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bits
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<BitString> {
        self.bits
            .get(start..start + len)
            .map(|b| BitString { bits: b.to_vec() })
            .ok_or_else(|| Error::DimensionMismatch(format!("range {start}+{len} outside {} bits", self.len())))
    }

    pub fn xor(&self, other: &BitString) -> Result<BitString> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch("xor of unequal lengths".into()));
        }
        Ok(BitString {
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| a ^ b).collect(),
        })
    }

    /// Positions where the two strings differ.
    pub fn hamming_distance(&self, other: &BitString) -> Result<usize> {
        Ok(self.xor(other)?.bits.iter().filter(|&&b| b == 1).count())
    }
}

/// Sifted keys and the tallies they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SiftResult {
    pub alice: BitString,
    pub bob: BitString,
    /// Kept records per basis, indexed by [`crate::Basis::index`].
    pub per_basis: [usize; 2],
    /// All records by intensity, state and channel; `sent` is left at zero.
    pub tally: DetectionTally,
}

/// Keep records where Alice's and Bob's bases agree, in input order.
pub fn sift(records: &[DetectionRecord]) -> SiftResult {
    let mut out = SiftResult {
        alice: BitString::new(),
        bob: BitString::new(),
        per_basis: [0; 2],
        tally: DetectionTally::default(),
    };
    for r in records {
        out.tally.add(r.intensity, r.alice_basis, r.alice_bit, r.channel, 1.0);
        if r.alice_basis == r.bob_basis {
            out.alice.push(r.alice_bit);
            out.bob.push(r.bob_bit);
            out.per_basis[r.bob_basis.index()] += 1;
        }
    }
    out
}

/// Bits disclosed by error correction, `⌈f_ec·n·h(qber)⌉`.
pub fn ec_leakage(n: u64, qber: f64, f_ec: f64) -> Result<u64> {
    if !(0.0..=0.5).contains(&qber) {
        return Err(Error::Domain(format!("qber {qber} outside [0, 0.5]")));
    }
    Ok((f_ec * n as f64 * binary_entropy(qber)?).ceil() as u64)
}

/// Seeded Fisher–Yates permutation applied before hashing.
pub fn shuffle(key: &BitString, seed: u64) -> BitString {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = key.bits.clone();
    bits.shuffle(&mut rng);
    BitString { bits }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Basis, Channel, Intensity};
    use rand::Rng;

    fn rec(alice_basis: Basis, alice_bit: u8, channel: Channel) -> DetectionRecord {
        DetectionRecord {
            pulse_index: 0,
            channel,
            alice_basis,
            alice_bit,
            bob_basis: channel.basis(),
            bob_bit: channel.bit(),
            intensity: Intensity::Signal,
            timestamp_ns: 0.0,
        }
    }

    #[test]
    fn sift_matching_bases_is_identity() {
        let records = [
            rec(Basis::Z, 0, Channel::H),
            rec(Basis::Z, 1, Channel::V),
            rec(Basis::X, 1, Channel::D),
        ];
        let s = sift(&records);
        assert_eq!(s.alice.as_slice(), &[0, 1, 1]);
        assert_eq!(s.bob.as_slice(), &[0, 1, 0]);
        assert_eq!(s.per_basis, [2, 1]);
        assert_eq!(s.tally.errors(Intensity::Signal), 1.0);
    }

    #[test]
    fn sift_mismatched_bases_is_empty() {
        let records = [rec(Basis::Z, 0, Channel::D), rec(Basis::X, 1, Channel::V)];
        let s = sift(&records);
        assert!(s.alice.is_empty() && s.bob.is_empty());
    }

    #[test]
    fn sift_retains_half_of_random_bases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let records: Vec<_> = (0..100_000)
            .map(|_| {
                let ba = if rng.random::<bool>() { Basis::Z } else { Basis::X };
                let c = Channel::ALL[rng.random_range(0..4)];
                rec(ba, rng.random_range(0..2), c)
            })
            .collect();
        let s = sift(&records);
        let frac = s.alice.len() as f64 / 1e5;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
        assert_eq!(s.alice.len(), s.bob.len());
    }

    #[test]
    fn leakage_examples() {
        assert_eq!(ec_leakage(1_000_000, 0.0, 1.44).unwrap(), 0);
        // 1.44e6·h(0.0093) = 109 607.08…
        assert_eq!(ec_leakage(1_000_000, 0.0093, 1.44).unwrap(), 109_608);
        assert_eq!(ec_leakage(12_345, 0.5, 1.0).unwrap(), 12_345);
        assert!(ec_leakage(10, 0.6, 1.0).is_err());
        let mut prev = 0;
        for k in 0..=500 {
            let l = ec_leakage(100_000, k as f64 / 1000.0, 1.2).unwrap();
            assert!(l >= prev);
            prev = l;
        }
    }

    #[test]
    fn byte_packing_round_trip() {
        let b = BitString::from_bits(vec![1, 0, 1, 1, 0, 0, 0, 1, 1, 1]).unwrap();
        let bytes = b.to_bytes();
        assert_eq!(bytes, vec![0b1011_0001, 0b1100_0000]);
        assert_eq!(BitString::from_bytes(&bytes, 10).unwrap(), b);
        assert!(BitString::from_bytes(&bytes, 17).is_err());
        assert!(BitString::from_bits(vec![2]).is_err());
    }

    #[test]
    fn shuffle_is_a_seeded_permutation() {
        let key = BitString::random(1000, 1);
        let a = shuffle(&key, 5);
        assert_eq!(a, shuffle(&key, 5));
        assert_ne!(a, shuffle(&key, 6));
        let ones = |b: &BitString| b.as_slice().iter().filter(|&&x| x == 1).count();
        assert_eq!(ones(&a), ones(&key));
    }
}
