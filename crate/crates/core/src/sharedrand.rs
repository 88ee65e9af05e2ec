//! Shared randomness derived from a 128-bit seed.
//!
//! Both players rebuild the same tape of `(x, p)` elements and the same
//! family of hash bits from the seed alone, with random access by index.
//!
//! Derivation (stable; other implementations must reproduce it bit for bit):
//!
//! * `mix(z)` is the SplitMix64 finalizer and `γ = 0x9E3779B97F4A7C15`.
//!   `stream(K, i) = mix(K + i·γ)` (wrapping) is the `i`-th output of a
//!   SplitMix64 generator whose state starts at `K`.
//! * The seed is split big-endian into `k0 ‖ k1`. The key of domain `tag` is
//!   `key(tag) = mix(mix(k0 ^ tag) + k1)`.
//! * Tape element `i ≥ 1` over a universe of `n` symbols:
//!   `x = ⌊stream(key(1), i) · n / 2^64⌋` and
//!   `p = (stream(key(2), i) >> 11) · 2^-53`.
//! * Hash bit `h_j(x)`, `j ≥ 1`: with `b = (j-1) / 64`,
//!   `word = stream(stream(key(3), b + 1), x + 1)` and the bit is
//!   `(word >> ((j-1) mod 64)) & 1`.
//! * Sub-seed `derive(tag, i)`: with `K = key(4 + (tag << 8))`, the high half
//!   is `stream(K, 2i + 1)` and the low half `stream(K, 2i + 2)`.
//!
//! These are statistical-quality bits, not cryptographic ones.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

const TAG_TAPE_X: u64 = 1;
const TAG_TAPE_P: u64 = 2;
const TAG_HASH: u64 = 3;
const TAG_DERIVE: u64 = 4;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn stream(key: u64, i: u64) -> u64 {
    mix64(key.wrapping_add(i.wrapping_mul(GAMMA)))
}

/// 128-bit shared seed. Displays and parses as 32 hex characters.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SharedSeed([u8; 16]);

impl SharedSeed {
    pub const fn from_bytes(bytes: [u8; 16]) -> Self {
        Self(bytes)
    }

    pub fn from_u128(v: u128) -> Self {
        Self(v.to_be_bytes())
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    pub fn to_u128(self) -> u128 {
        u128::from_be_bytes(self.0)
    }

    fn halves(&self) -> (u64, u64) {
        let v = self.to_u128();
        ((v >> 64) as u64, v as u64)
    }

    fn key(&self, tag: u64) -> u64 {
        let (k0, k1) = self.halves();
        mix64(mix64(k0 ^ tag).wrapping_add(k1))
    }

    /// Independent-looking child seed, e.g. one per trial or per tree level.
    pub fn derive(&self, tag: u64, index: u64) -> SharedSeed {
        let k = self.key(TAG_DERIVE.wrapping_add(tag << 8));
        let hi = stream(k, index.wrapping_mul(2).wrapping_add(1));
        let lo = stream(k, index.wrapping_mul(2).wrapping_add(2));
        SharedSeed::from_u128(((hi as u128) << 64) | lo as u128)
    }

    /// Seed for a 64-bit generator, for harness-side sampling of inputs.
    pub fn rng_seed(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        out[..16].copy_from_slice(&self.0);
        out[16..24].copy_from_slice(&self.key(0xA5).to_be_bytes());
        out[24..].copy_from_slice(&self.key(0x5A).to_be_bytes());
        out
    }
}

impl fmt::Debug for SharedSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SharedSeed({self})")
    }
}

impl fmt::Display for SharedSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for SharedSeed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() != 32 {
            return Err(Error::InvalidParameter(format!(
                "seed must be 32 hex characters, got {}",
                s.len()
            )));
        }
        let mut bytes = [0u8; 16];
        hex::decode_to_slice(s, &mut bytes)
            .map_err(|e| Error::InvalidParameter(format!("seed: {e}")))?;
        Ok(Self(bytes))
    }
}

impl TryFrom<String> for SharedSeed {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SharedSeed> for String {
    fn from(s: SharedSeed) -> String {
        s.to_string()
    }
}

/// A point of `U × [0,1)` read off the shared tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapeElement {
    pub x: usize,
    pub p: f64,
}

/// Random-access view of the tape for a fixed seed and universe size.
#[derive(Debug, Clone, Copy)]
pub struct Tape {
    key_x: u64,
    key_p: u64,
    universe: u64,
}

impl Tape {
    pub fn new(seed: &SharedSeed, universe: usize) -> Self {
        assert!(universe >= 1, "universe must be non-empty");
        Self {
            key_x: seed.key(TAG_TAPE_X),
            key_p: seed.key(TAG_TAPE_P),
            universe: universe as u64,
        }
    }

    #[inline]
    pub fn symbol(&self, i: u64) -> usize {
        ((stream(self.key_x, i) as u128 * self.universe as u128) >> 64) as usize
    }

    #[inline]
    pub fn height(&self, i: u64) -> f64 {
        (stream(self.key_p, i) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Element `i`, 1-based.
    #[inline]
    pub fn element(&self, i: u64) -> TapeElement {
        debug_assert!(i >= 1);
        TapeElement {
            x: self.symbol(i),
            p: self.height(i),
        }
    }
}

pub fn element_at(seed: &SharedSeed, universe: usize, i: u64) -> TapeElement {
    Tape::new(seed, universe).element(i)
}

/// The family of hash functions `h_j : U → {0,1}`.
#[derive(Debug, Clone, Copy)]
pub struct HashFamily {
    key: u64,
}

impl HashFamily {
    pub fn new(seed: &SharedSeed) -> Self {
        Self {
            key: seed.key(TAG_HASH),
        }
    }

    /// Bits `h_{64b+1} .. h_{64b+64}` of `x`, lowest bit first.
    #[inline]
    pub fn word(&self, block: u64, x: usize) -> u64 {
        stream(stream(self.key, block + 1), x as u64 + 1)
    }

    #[inline]
    pub fn bit(&self, j: u64, x: usize) -> bool {
        debug_assert!(j >= 1);
        let j0 = j - 1;
        (self.word(j0 / 64, x) >> (j0 % 64)) & 1 == 1
    }

    /// Bits `h_from ..= h_to` of `x` in order of `j`.
    pub fn bits(&self, x: usize, from: u64, to: u64) -> Vec<bool> {
        (from..=to).map(|j| self.bit(j, x)).collect()
    }
}

pub fn hash_bit(seed: &SharedSeed, j: u64, x: usize) -> bool {
    HashFamily::new(seed).bit(j, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(n: u128) -> SharedSeed {
        SharedSeed::from_u128(n.wrapping_mul(0x0123_4567_89AB_CDEF_FEDC_BA98_7654_3211))
    }

    #[test]
    fn hex_roundtrip_and_validation() {
        let s: SharedSeed = "000102030405060708090a0b0c0d0e0f".parse().unwrap();
        assert_eq!(s.to_string(), "000102030405060708090a0b0c0d0e0f");
        assert!("0011".parse::<SharedSeed>().is_err());
        assert!("zz0102030405060708090a0b0c0d0e0f"
            .parse::<SharedSeed>()
            .is_err());
    }

    #[test]
    fn element_is_deterministic() {
        let s = seed(7);
        for i in 1..50 {
            assert_eq!(element_at(&s, 10, i), element_at(&s, 10, i));
            assert_eq!(hash_bit(&s, i, 3), hash_bit(&s, i, 3));
        }
    }

    #[test]
    fn element_range() {
        let t = Tape::new(&seed(3), 5);
        for i in 1..10_000 {
            let e = t.element(i);
            assert!(e.x < 5);
            assert!((0.0..1.0).contains(&e.p));
        }
    }

    #[test]
    fn symbol_frequencies_are_uniform() {
        let t = Tape::new(&seed(11), 4);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for i in 1..=n {
            counts[t.symbol(i)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn distinct_seeds_diverge_early() {
        for k in 0..100u128 {
            let a = Tape::new(&seed(k), 1000);
            let b = Tape::new(&seed(k + 1), 1000);
            assert!((1..=100).any(|i| a.element(i) != b.element(i)));
        }
    }

    #[test]
    fn hash_collision_rate_over_seeds() {
        let n = 100_000u128;
        let mut same_xy = 0;
        let mut same_j = 0;
        for k in 0..n {
            let s = seed(k + 1);
            if hash_bit(&s, 5, 2) == hash_bit(&s, 5, 9) {
                same_xy += 1;
            }
            if hash_bit(&s, 5, 2) == hash_bit(&s, 70, 2) {
                same_j += 1;
            }
        }
        let fx = same_xy as f64 / n as f64;
        let fj = same_j as f64 / n as f64;
        assert!((0.49..=0.51).contains(&fx), "{fx}");
        assert!((0.49..=0.51).contains(&fj), "{fj}");
    }

    #[test]
    fn derive_is_deterministic_and_distinct() {
        let s = seed(5);
        assert_eq!(s.derive(1, 2), s.derive(1, 2));
        assert_ne!(s.derive(1, 2), s.derive(1, 3));
        assert_ne!(s.derive(1, 2), s.derive(2, 2));
    }
}
