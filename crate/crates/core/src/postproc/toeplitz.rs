//! Toeplitz hashing over GF(2).
//!
//! The `m × n` matrix is `T[i][j] = seed[i − j + n − 1]`, so output bit `i` is
//! the parity of `seed[i .. i + n]` against the reversed key. Both are packed
//! into 64-bit words and the seed window is read at a bit offset.

use super::BitString;
use crate::error::{Error, Result};

/// Seed of an `n → m` Toeplitz hash, `n + m − 1` bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaSeed {
    pub input_len: usize,
    pub output_len: usize,
    pub bits: BitString,
}

fn seed_len(n: usize, m: usize) -> usize {
    if m == 0 {
        0
    } else {
        n + m - 1
    }
}

impl PaSeed {
    pub fn new(input_len: usize, output_len: usize, bits: BitString) -> Result<Self> {
        let want = seed_len(input_len, output_len);
        if bits.len() != want {
            return Err(Error::DimensionMismatch(format!(
                "seed has {} bits, {input_len} → {output_len} hashing needs {want}",
                bits.len()
            )));
        }
        Ok(PaSeed {
            input_len,
            output_len,
            bits,
        })
    }

    pub fn random(input_len: usize, output_len: usize, seed: u64) -> Self {
        PaSeed {
            input_len,
            output_len,
            bits: BitString::random(seed_len(input_len, output_len), seed),
        }
    }
}

fn pack(bits: impl ExactSizeIterator<Item = u8>) -> Vec<u64> {
    let mut words = vec![0u64; bits.len().div_ceil(64) + 1];
    for (i, b) in bits.enumerate() {
        words[i / 64] |= (b as u64) << (i % 64);
    }
    words
}

/// 64 bits of `words` starting at bit `offset`.
fn window(words: &[u64], offset: usize) -> u64 {
    let (w, s) = (offset / 64, offset % 64);
    let lo = words[w] >> s;
    if s == 0 {
        lo
    } else {
        lo | words.get(w + 1).map_or(0, |hi| hi << (64 - s))
    }
}

/// Compress `key` to `out_len` bits with the Toeplitz matrix given by `seed`.
pub fn privacy_amplify(key: &BitString, out_len: usize, seed: &PaSeed) -> Result<BitString> {
    let n = key.len();
    if out_len > n {
        return Err(Error::DimensionMismatch(format!(
            "output {out_len} longer than key {n}"
        )));
    }
    if seed.input_len != n || seed.output_len != out_len || seed.bits.len() != seed_len(n, out_len) {
        return Err(Error::DimensionMismatch(format!(
            "seed built for {} → {}, key is {n} → {out_len}",
            seed.input_len, seed.output_len
        )));
    }
    if out_len == 0 {
        return Ok(BitString::new());
    }
    let key_rev = pack(key.as_slice().iter().rev().copied());
    let seed_words = pack(seed.bits.as_slice().iter().copied());
    let full = n / 64;
    let tail = n % 64;
    let tail_mask = if tail == 0 { 0 } else { (1u64 << tail) - 1 };
    let mut out = BitString::new();
    for i in 0..out_len {
        let mut acc = 0u64;
        for w in 0..full {
            acc ^= window(&seed_words, i + 64 * w) & key_rev[w];
        }
        if tail > 0 {
            acc ^= window(&seed_words, i + 64 * full) & key_rev[full] & tail_mask;
        }
        out.push((acc.count_ones() & 1) as u8);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(v: &[u8]) -> BitString {
        BitString::from_bits(v.to_vec()).unwrap()
    }

    /// Explicit matrix-vector product.
    fn brute_force(key: &BitString, out_len: usize, seed: &BitString) -> BitString {
        let n = key.len();
        let mut out = BitString::new();
        for i in 0..out_len {
            let mut acc = 0;
            for j in 0..n {
                acc ^= seed.get(i + n - 1 - j) & key.get(j);
            }
            out.push(acc);
        }
        out
    }

    #[test]
    fn hand_enumerated_eight_to_four() {
        let seed = bits(&[1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 1]);
        let key = bits(&[1, 1, 0, 1, 0, 1, 1, 0]);
        // rows T[i][·] = seed[i+7], seed[i+6], …, seed[i]
        let matrix = [
            [0, 1, 0, 0, 1, 1, 0, 1],
            [1, 0, 1, 0, 0, 1, 1, 0],
            [1, 1, 0, 1, 0, 0, 1, 1],
            [1, 1, 1, 0, 1, 0, 0, 1],
        ];
        let expected: Vec<u8> = matrix
            .iter()
            .map(|row| row.iter().zip(key.as_slice()).map(|(a, b)| a & b).sum::<u8>() % 2)
            .collect();
        assert_eq!(expected, vec![0, 1, 0, 0]);
        let pa = PaSeed::new(8, 4, seed).unwrap();
        assert_eq!(privacy_amplify(&key, 4, &pa).unwrap().as_slice(), expected.as_slice());
    }

    #[test]
    fn empty_output_and_zero_key() {
        let key = BitString::random(100, 3);
        let pa = PaSeed::new(100, 0, BitString::new()).unwrap();
        assert!(privacy_amplify(&key, 0, &pa).unwrap().is_empty());
        let zero = BitString::zeros(100);
        let pa = PaSeed::random(100, 40, 9);
        assert_eq!(privacy_amplify(&zero, 40, &pa).unwrap(), BitString::zeros(40));
    }

    #[test]
    fn dimension_errors() {
        let key = BitString::random(10, 1);
        assert!(PaSeed::new(10, 4, BitString::zeros(12)).is_err());
        let pa = PaSeed::random(10, 4, 1);
        assert!(privacy_amplify(&key, 5, &pa).is_err());
        let pa = PaSeed::random(10, 11, 1);
        assert!(privacy_amplify(&key, 11, &pa).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force(n in 1usize..300, frac in 0.0f64..=1.0, s in any::<u64>()) {
            let m = ((n as f64 * frac) as usize).min(n);
            let key = BitString::random(n, s);
            let pa = PaSeed::random(n, m, s.wrapping_add(1));
            prop_assert_eq!(privacy_amplify(&key, m, &pa).unwrap(), brute_force(&key, m, &pa.bits));
        }

        #[test]
        fn linear_over_gf2(n in 1usize..400, m in 1usize..200, s in any::<u64>()) {
            let m = m.min(n);
            let a = BitString::random(n, s);
            let b = BitString::random(n, s ^ 0xdead_beef);
            let pa = PaSeed::random(n, m, s.rotate_left(7));
            let lhs = privacy_amplify(&a.xor(&b).unwrap(), m, &pa).unwrap();
            let rhs = privacy_amplify(&a, m, &pa).unwrap().xor(&privacy_amplify(&b, m, &pa).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
        }
    }
}
