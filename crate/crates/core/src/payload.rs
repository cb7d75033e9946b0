use rand::Rng;

use crate::error::{Error, Result};

/// Payload bit string `m = m_1 || ... || m_G`.
///
/// Chunk `g` is bits `g*k .. (g+1)*k`, read big-endian (first bit is the
/// most significant). The hex form packs bits MSB-first into
/// `ceil(len / 8)` bytes with zero padding at the end, so for `k = 4` each
/// hex digit is exactly one chunk.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Payload {
    bits: Vec<bool>,
}

impl Payload {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![false; len])
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Self {
        Self::new((0..len).map(|_| rng.random()).collect())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn from_chunks(chunks: &[u32], k: u32) -> Result<Self> {
        let mut bits = Vec::with_capacity(chunks.len() * k as usize);
        for &c in chunks {
            if k < 32 && c >> k != 0 {
                return Err(Error::Payload(format!("chunk {c} does not fit in {k} bits")));
            }
            bits.extend((0..k).rev().map(|i| (c >> i) & 1 == 1));
        }
        Ok(Self::new(bits))
    }

    /// Splits into `len / k` chunks.
    pub fn chunks(&self, k: u32) -> Result<Vec<u32>> {
        let k_us = k as usize;
        if k == 0 || k > 32 || !self.bits.len().is_multiple_of(k_us) {
            return Err(Error::Payload(format!(
                "payload of {} bits does not split into {k}-bit chunks",
                self.bits.len()
            )));
        }
        Ok(self
            .bits
            .chunks_exact(k_us)
            .map(|c| c.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32))
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Payload(format!(
                "a {len}-bit payload takes {} bytes, got {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        let bits: Vec<bool> = (0..bytes.len() * 8)
            .map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0)
            .collect();
        if bits[len..].iter().any(|&b| b) {
            return Err(Error::Payload("nonzero padding bits".into()));
        }
        Ok(Self::new(bits[..len].to_vec()))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(text: &str, len: usize) -> Result<Self> {
        let bytes = hex::decode(text.trim()).map_err(|e| Error::Payload(format!("bad payload hex: {e}")))?;
        Self::from_bytes(&bytes, len)
    }

    /// Fraction of agreeing bits; lengths must match.
    pub fn bit_accuracy(&self, other: &Payload) -> Result<f64> {
        if self.len() != other.len() || self.is_empty() {
            return Err(Error::Payload(format!(
                "cannot compare payloads of {} and {} bits",
                self.len(),
                other.len()
            )));
        }
        let agree = self.bits.iter().zip(&other.bits).filter(|(a, b)| a == b).count();
        Ok(agree as f64 / self.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_are_big_endian() {
        let p = Payload::from_chunks(&[0b1011, 0b0001], 4).unwrap();
        assert_eq!(
            p.bits(),
            &[true, false, true, true, false, false, false, true]
        );
        assert_eq!(p.chunks(4).unwrap(), vec![11, 1]);
        assert_eq!(p.to_hex(), "b1");
        assert!(Payload::from_chunks(&[16], 4).is_err());
        assert!(p.chunks(3).is_err());
    }

    #[test]
    fn hex_padding_rules() {
        let p = Payload::from_hex("a0", 3).unwrap();
        assert_eq!(p.bits(), &[true, false, true]);
        assert!(Payload::from_hex("a1", 3).is_err());
        assert!(Payload::from_hex("a0a0", 3).is_err());
        assert!(Payload::from_hex("xyz", 3).is_err());
        // 255 bits worth of hex (63 digits) is rejected for a 256-bit payload
        assert!(Payload::from_hex(&"f".repeat(63), 256).is_err());
        assert_eq!(Payload::from_hex(&"f".repeat(64), 256).unwrap().len(), 256);
    }

    #[test]
    fn accuracy() {
        let a = Payload::from_chunks(&[0b1111], 4).unwrap();
        let b = Payload::from_chunks(&[0b1100], 4).unwrap();
        assert_eq!(a.bit_accuracy(&b).unwrap(), 0.5);
        assert!(a.bit_accuracy(&Payload::zeros(3)).is_err());
    }
}
