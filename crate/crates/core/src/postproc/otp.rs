//! One-time pad over a persistent, consumable key store.
//!
//! Key file layout (little endian):
//!
//! | offset | size | field        |
//! |--------|------|--------------|
//! | 0      | 4    | magic `OTPK` |
//! | 4      | 4    | version = 1  |
//! | 8      | 4    | length, bits |
//! | 12     | 4    | spent, bits  |
//! | 16     | ..   | key bits, MSB first, zero padded |

use std::path::{Path, PathBuf};

use super::BitString;
use crate::error::{Error, Result};
use crate::pipeline::write_atomic_private;

pub const KEY_MAGIC: &[u8; 4] = b"OTPK";
pub const KEY_VERSION: u32 = 1;
pub const KEY_HEADER_LEN: usize = 16;

fn require(needed: usize, available: usize) -> Result<()> {
    if needed > available {
        return Err(Error::KeyExhausted {
            needed: needed as u64,
            available: available as u64,
        });
    }
    Ok(())
}

fn xor_with_key(data: &[u8], key: &BitString) -> Result<Vec<u8>> {
    require(8 * data.len(), key.len())?;
    let pad = key.slice(0, 8 * data.len())?.to_bytes();
    Ok(data.iter().zip(pad).map(|(d, k)| d ^ k).collect())
}

/// XOR `plaintext` with the first `8·len` key bits.
pub fn otp_encrypt(plaintext: &[u8], key: &BitString) -> Result<Vec<u8>> {
    xor_with_key(plaintext, key)
}

pub fn otp_decrypt(ciphertext: &[u8], key: &BitString) -> Result<Vec<u8>> {
    xor_with_key(ciphertext, key)
}

/// Key material on disk with a high-water mark of consumed bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyStore {
    path: PathBuf,
    bits: BitString,
    spent: usize,
}

impl KeyStore {
    /// Write a fresh store holding `bits`, none spent.
    pub fn create(path: impl Into<PathBuf>, bits: BitString) -> Result<Self> {
        if u32::try_from(bits.len()).is_err() {
            return Err(Error::KeyFormat(format!("{} bits exceed the header field", bits.len())));
        }
        let store = KeyStore {
            path: path.into(),
            bits,
            spent: 0,
        };
        store.save()?;
        Ok(store)
    }

    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let raw = std::fs::read(&path)?;
        let (bits, spent) = Self::decode(&raw)?;
        Ok(KeyStore { path, bits, spent })
    }

    fn decode(raw: &[u8]) -> Result<(BitString, usize)> {
        if raw.len() < KEY_HEADER_LEN {
            return Err(Error::KeyFormat(format!(
                "{} bytes, header needs {KEY_HEADER_LEN}",
                raw.len()
            )));
        }
        if &raw[0..4] != KEY_MAGIC {
            return Err(Error::KeyFormat("bad magic".into()));
        }
        let word = |o: usize| u32::from_le_bytes(raw[o..o + 4].try_into().unwrap()) as usize;
        let version = word(4) as u32;
        if version != KEY_VERSION {
            return Err(Error::KeyFormat(format!("unsupported version {version}")));
        }
        let (len, spent) = (word(8), word(12));
        if spent > len {
            return Err(Error::KeyFormat(format!("spent {spent} exceeds length {len}")));
        }
        let body = &raw[KEY_HEADER_LEN..];
        if body.len() != len.div_ceil(8) {
            return Err(Error::KeyFormat(format!("{} payload bytes for {len} bits", body.len())));
        }
        Ok((BitString::from_bytes(body, len)?, spent))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(KEY_HEADER_LEN + self.bits.len().div_ceil(8));
        out.extend_from_slice(KEY_MAGIC);
        out.extend_from_slice(&KEY_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.bits.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.spent as u32).to_le_bytes());
        out.extend_from_slice(&self.bits.to_bytes());
        out
    }

    pub fn save(&self) -> Result<()> {
        write_atomic_private(&self.path, &self.encode())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len_bits(&self) -> usize {
        self.bits.len()
    }

    pub fn spent_bits(&self) -> usize {
        self.spent
    }

    pub fn available_bits(&self) -> usize {
        self.bits.len() - self.spent
    }

    /// Consume the next `n` unspent bits and persist the new mark.
    pub fn take(&mut self, n: usize) -> Result<BitString> {
        self.take_range(self.spent, n)
    }

    /// Consume `[start, start + n)`. Any overlap with spent bits is refused;
    /// bits skipped below `start` are spent as well.
    pub fn take_range(&mut self, start: usize, n: usize) -> Result<BitString> {
        if start < self.spent {
            return Err(Error::KeyExhausted {
                needed: n as u64,
                available: 0,
            });
        }
        require(start + n, self.bits.len()).map_err(|_| Error::KeyExhausted {
            needed: n as u64,
            available: self.bits.len().saturating_sub(start) as u64,
        })?;
        let out = self.bits.slice(start, n)?;
        self.spent = start + n;
        self.save()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_kilobyte_round_trip() {
        let msg: Vec<u8> = (0..2048u32).map(|i| (i * 31 % 251) as u8).collect();
        let key = BitString::random(8 * 2048, 11);
        let ct = otp_encrypt(&msg, &key).unwrap();
        assert_ne!(ct, msg);
        assert_eq!(otp_decrypt(&ct, &key).unwrap(), msg);
    }

    #[test]
    fn empty_message_needs_no_key() {
        assert!(otp_encrypt(&[], &BitString::new()).unwrap().is_empty());
    }

    #[test]
    fn short_key_is_exhausted() {
        let key = BitString::random(15, 1);
        match otp_encrypt(&[1, 2], &key) {
            Err(Error::KeyExhausted {
                needed: 16,
                available: 15,
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn store_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.otpk");
        let bits = BitString::from_bits(vec![1, 0, 1, 1, 0, 0, 0, 1, 1]).unwrap();
        let mut store = KeyStore::create(&path, bits).unwrap();
        store.take(3).unwrap();
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[0..4], b"OTPK");
        assert_eq!(&raw[4..8], &[1, 0, 0, 0]);
        assert_eq!(&raw[8..12], &[9, 0, 0, 0]);
        assert_eq!(&raw[12..16], &[3, 0, 0, 0]);
        assert_eq!(&raw[16..], &[0b1011_0001, 0b1000_0000]);
    }

    #[test]
    fn store_consumes_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("key.bin");
        let bits = BitString::random(100, 4);
        let mut store = KeyStore::create(&path, bits.clone()).unwrap();
        let a = store.take(40).unwrap();
        assert_eq!(a, bits.slice(0, 40).unwrap());

        let mut reopened = KeyStore::open(&path).unwrap();
        assert_eq!(reopened.spent_bits(), 40);
        assert!(reopened.take_range(10, 5).is_err());
        let b = reopened.take_range(50, 10).unwrap();
        assert_eq!(b, bits.slice(50, 10).unwrap());
        assert_eq!(reopened.available_bits(), 40);
        assert!(matches!(reopened.take(41), Err(Error::KeyExhausted { .. })));
        assert_eq!(KeyStore::open(&path).unwrap().spent_bits(), 60);
    }

    #[test]
    fn corrupt_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k");
        let store = KeyStore::create(&path, BitString::random(20, 1)).unwrap();
        let good = store.encode();
        for (i, v) in [(0usize, b'X'), (4, 2), (12, 21)] {
            let mut bad = good.clone();
            bad[i] = v;
            std::fs::write(&path, &bad).unwrap();
            assert!(matches!(KeyStore::open(&path), Err(Error::KeyFormat(_))));
        }
        std::fs::write(&path, &good[..17]).unwrap();
        assert!(KeyStore::open(&path).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn round_trip(msg in proptest::collection::vec(any::<u8>(), 0..256), extra in 0usize..64, s in any::<u64>()) {
            let key = BitString::random(8 * msg.len() + extra, s);
            let ct = otp_encrypt(&msg, &key).unwrap();
            prop_assert_eq!(ct.len(), msg.len());
            prop_assert_eq!(otp_decrypt(&ct, &key).unwrap(), msg);
        }
    }
}
