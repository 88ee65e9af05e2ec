use std::fmt;

/// A burst of protocol bits, in transmission order.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct Bits(Vec<bool>);

impl Bits {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn from_bools(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    /// Big-endian encoding of `value` on exactly `width` bits. Bits above
    /// `width` are dropped.
    pub fn from_uint(value: u64, width: u32) -> Self {
        Self(
            (0..width)
                .rev()
                .map(|i| i < 64 && (value >> i) & 1 == 1)
                .collect(),
        )
    }

    /// Big-endian decoding; `None` if more than 64 bits are set in range.
    pub fn to_uint(&self) -> Option<u64> {
        if self.0.len() > 64 {
            return None;
        }
        Some(self.0.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn push(&mut self, b: bool) {
        self.0.push(b);
    }

    pub fn extend_from(&mut self, other: &Bits) {
        self.0.extend_from_slice(&other.0);
    }

    /// Packs MSB-first into bytes, zero-filling the unused low bits.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.0.len().div_ceil(8)];
        for (i, &b) in self.0.iter().enumerate() {
            if b {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], bit_len: usize) -> Self {
        Self(
            (0..bit_len)
                .map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0)
                .collect(),
        )
    }
}

impl fmt::Debug for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Bits(")?;
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        f.write_str(")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uint_encoding_is_big_endian() {
        let b = Bits::from_uint(5, 4);
        assert_eq!(b.as_slice(), &[false, true, false, true]);
        assert_eq!(b.to_uint(), Some(5));
        assert_eq!(Bits::from_uint(0b1101, 2).to_uint(), Some(1));
    }

    #[test]
    fn byte_packing() {
        let b = Bits::from_bools(vec![
            true, false, true, true, false, false, false, false, true,
        ]);
        assert_eq!(b.to_bytes(), vec![0b1011_0000, 0b1000_0000]);
        assert_eq!(Bits::from_bytes(&b.to_bytes(), 9), b);
    }
}
