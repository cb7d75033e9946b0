//! Keyed, platform-independent pseudorandomness.
//!
//! Every random quantity in the watermark (the canonical latent, the
//! within-bin orderings, the block placement permutation) is a pure function
//! of a [`SecretKey`], an optional public [`Nonce`], and a domain-separation
//! label. The construction is fixed so that another implementation can
//! regenerate the same values bit for bit:
//!
//! * stream seed: `SHA-256("shapemark:stream:v1" || key || label)`
//! * stream: ChaCha20 keystream under that seed (64-bit block counter starting
//!   at zero, zero stream id), consumed as little-endian `u64` words
//! * uniform real: `(w >> 11) * 2^-53`, a value in `[0, 1)` with a full
//!   53-bit mantissa
//! * Gaussian: Box-Muller over consecutive word pairs `(w1, w2)` with
//!   `u1 = 1 - uniform(w1)` in `(0, 1]`, `u2 = uniform(w2)`, emitting
//!   `r cos(2 pi u2)` then `r sin(2 pi u2)` where `r = sqrt(-2 ln u1)`;
//!   transcendental functions come from the pure-Rust `libm` port so results
//!   do not depend on the host C library
//! * bounded integer in `[0, n)`: reject words below `2^64 mod n`, then
//!   reduce modulo `n`
//! * permutation: Fisher-Yates, for `i = n-1 down to 1` swap `i` with a
//!   bounded draw in `[0, i]`
//! * KDF: `SHA-256(key || nonce || "shapemark:pdsr-kdf:v1")`

use std::fmt;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 16;

const STREAM_CONTEXT: &[u8] = b"shapemark:stream:v1";
const KDF_CONTEXT: &[u8] = b"shapemark:pdsr-kdf:v1";

/// Label for the canonical latent stream.
pub const LABEL_LATENT: &str = "latent";
/// Label for the block placement permutation.
pub const LABEL_PDSR: &str = "pdsr";

/// Label for the within-bin ordering of bin `q` (1-based).
pub fn bin_shuffle_label(q: usize) -> String {
    format!("binshuffle:{q}")
}

/// The identity key. Never serialized into detection reports.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey([u8; KEY_LEN]);

impl SecretKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    pub fn from_hex(text: &str) -> Result<Self> {
        parse_hex_array(text.trim(), "key").map(Self)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Reads a key file: one hex line, optional trailing newline.
    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let line = lines
            .next()
            .ok_or_else(|| Error::Format("key file is empty".into()))?;
        if lines.next().is_some() {
            return Err(Error::Format("key file must hold a single hex line".into()));
        }
        Self::from_hex(line)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, format!("{}\n", self.to_hex()))?;
        Ok(())
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

/// Public per-image value that re-keys the block placement permutation.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Nonce([u8; NONCE_LEN]);

impl Nonce {
    pub fn from_bytes(bytes: [u8; NONCE_LEN]) -> Self {
        Self(bytes)
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; NONCE_LEN] {
        &self.0
    }

    pub fn from_hex(text: &str) -> Result<Self> {
        parse_hex_array(text.trim(), "nonce").map(Self)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({})", self.to_hex())
    }
}

/// Nonce-conditioned key for the block placement permutation.
#[derive(Clone, PartialEq, Eq)]
pub struct DerivedKey([u8; KEY_LEN]);

impl DerivedKey {
    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for DerivedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DerivedKey(..)")
    }
}

/// Key material that can seed a [`KeyedStream`].
pub trait StreamKey {
    fn key_bytes(&self) -> &[u8; KEY_LEN];
}

impl StreamKey for SecretKey {
    fn key_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl StreamKey for DerivedKey {
    fn key_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

fn parse_hex_array<const N: usize>(text: &str, what: &str) -> Result<[u8; N]> {
    if text.len() != 2 * N {
        return Err(Error::Format(format!(
            "{what} must be {} hex characters, got {}",
            2 * N,
            text.len()
        )));
    }
    let mut out = [0u8; N];
    hex::decode_to_slice(text, &mut out)
        .map_err(|e| Error::Format(format!("bad {what} hex: {e}")))?;
    Ok(out)
}

fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

/// Derives the nonce-conditioned block permutation key.
pub fn kdf(key: &SecretKey, nonce: &Nonce) -> DerivedKey {
    DerivedKey(sha256(&[key.as_bytes(), nonce.as_bytes(), KDF_CONTEXT]))
}

/// Deterministic keyed word stream. See the module docs for the exact layout.
pub struct KeyedStream {
    rng: ChaCha20Rng,
}

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

impl KeyedStream {
    pub fn new<K: StreamKey + ?Sized>(key: &K, label: &str) -> Self {
        let seed = sha256(&[STREAM_CONTEXT, key.key_bytes(), label.as_bytes()]);
        Self {
            rng: ChaCha20Rng::from_seed(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Unbiased integer in `[0, n)`; `n` must be nonzero.
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let reject_below = n.wrapping_neg() % n;
        loop {
            let w = self.next_u64();
            if w >= reject_below {
                return w % n;
            }
        }
    }

    /// One Box-Muller pair.
    pub fn next_gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.next_unit();
        let u2 = self.next_unit();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * libm::cos(theta), r * libm::sin(theta))
    }
}

/// `count` standard-normal values from the stream `(key, label)`.
///
/// Values are produced in Box-Muller pairs; for odd `count` the final sine
/// output is dropped.
pub fn gaussian_stream<K: StreamKey + ?Sized>(key: &K, label: &str, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::EmptyRequest("gaussian stream of length 0"));
    }
    let mut stream = KeyedStream::new(key, label);
    let mut out = Vec::with_capacity(count + 1);
    while out.len() < count {
        let (a, b) = stream.next_gaussian_pair();
        out.push(a);
        out.push(b);
    }
    out.truncate(count);
    Ok(out)
}

/// Keyed pseudorandom permutation of `0..n` (0-based), by Fisher-Yates.
pub fn prp<K: StreamKey + ?Sized>(key: &K, label: &str, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::EmptyRequest("permutation of length 0"));
    }
    let mut stream = KeyedStream::new(key, label);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = stream.next_below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    Ok(perm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn key(byte: u8) -> SecretKey {
        SecretKey::from_bytes([byte; KEY_LEN])
    }

    #[test]
    fn kdf_is_deterministic_and_input_sensitive() {
        let r0 = Nonce::from_bytes([1; NONCE_LEN]);
        let r1 = Nonce::from_bytes([2; NONCE_LEN]);
        assert_eq!(kdf(&key(0), &r0), kdf(&key(0), &r0));
        assert_ne!(kdf(&key(0), &r0), kdf(&key(0), &r1));
        assert_ne!(kdf(&key(0), &r0), kdf(&key(1), &r0));
    }

    #[test]
    fn kdf_avalanche() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let trials = 1000;
        let mut flipped_bits = 0u64;
        for t in 0..trials {
            let k = SecretKey::random(&mut rng);
            let r = Nonce::random(&mut rng);
            let base = kdf(&k, &r);
            let (k2, r2) = if t % 2 == 0 {
                let mut b = *k.as_bytes();
                let bit = rng.random_range(0..KEY_LEN * 8);
                b[bit / 8] ^= 1 << (bit % 8);
                (SecretKey::from_bytes(b), r)
            } else {
                let mut b = *r.as_bytes();
                let bit = rng.random_range(0..NONCE_LEN * 8);
                b[bit / 8] ^= 1 << (bit % 8);
                (k, Nonce::from_bytes(b))
            };
            let other = kdf(&k2, &r2);
            flipped_bits += base
                .as_bytes()
                .iter()
                .zip(other.as_bytes())
                .map(|(a, b)| (a ^ b).count_ones() as u64)
                .sum::<u64>();
        }
        let fraction = flipped_bits as f64 / (trials as f64 * 256.0);
        assert!(fraction >= 0.30, "avalanche fraction {fraction}");
    }

    #[test]
    fn gaussian_stream_rejects_empty() {
        assert!(matches!(
            gaussian_stream(&key(3), LABEL_LATENT, 0),
            Err(Error::EmptyRequest(_))
        ));
    }

    #[test]
    fn gaussian_stream_is_bit_identical() {
        let a = gaussian_stream(&key(3), LABEL_LATENT, 1001).unwrap();
        let b = gaussian_stream(&key(3), LABEL_LATENT, 1001).unwrap();
        assert_eq!(a.len(), 1001);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn odd_count_is_prefix_of_even() {
        let a = gaussian_stream(&key(9), "x", 7).unwrap();
        let b = gaussian_stream(&key(9), "x", 8).unwrap();
        assert_eq!(a[..], b[..7]);
    }

    #[test]
    fn gaussian_moments() {
        let n = 100_000;
        let xs = gaussian_stream(&key(5), LABEL_LATENT, n).unwrap();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "variance {var}");
    }

    #[test]
    fn labels_give_uncorrelated_streams() {
        let n = 100_000;
        let a = gaussian_stream(&key(5), LABEL_LATENT, n).unwrap();
        let b = gaussian_stream(&key(5), &bin_shuffle_label(1), n).unwrap();
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(&b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        let rho = sab / (saa * sbb).sqrt();
        assert!(rho.abs() < 0.02, "correlation {rho}");
    }

    #[test]
    fn prp_small_cases() {
        assert!(matches!(prp(&key(1), LABEL_PDSR, 0), Err(Error::EmptyRequest(_))));
        assert_eq!(prp(&key(1), LABEL_PDSR, 1).unwrap(), vec![0]);
        assert_eq!(
            prp(&key(1), LABEL_PDSR, 50).unwrap(),
            prp(&key(1), LABEL_PDSR, 50).unwrap()
        );
    }

    #[test]
    fn prp_is_bijection() {
        for n in 1..=1000 {
            let mut p = prp(&key((n % 251) as u8), LABEL_PDSR, n).unwrap();
            p.sort_unstable();
            assert!(p.iter().enumerate().all(|(i, &v)| i == v), "n = {n}");
        }
    }

    #[test]
    fn prp_uniform_over_s4() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let trials = 10_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..trials {
            let p = prp(&SecretKey::random(&mut rng), LABEL_PDSR, 4).unwrap();
            *counts.entry(p).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 24);
        for (perm, c) in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 1.0 / 24.0).abs() < 0.015, "{perm:?}: {f}");
        }
    }

    #[test]
    fn next_below_covers_range() {
        let mut s = KeyedStream::new(&key(2), "t");
        let mut seen = [false; 7];
        for _ in 0..500 {
            seen[s.next_below(7) as usize] = true;
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn hex_round_trip_and_errors() {
        let k = key(0xab);
        assert_eq!(k.to_hex().len(), 64);
        assert_eq!(SecretKey::from_hex(&k.to_hex()).unwrap(), k);
        assert!(SecretKey::from_hex("abcd").is_err());
        assert!(SecretKey::from_hex(&"zz".repeat(32)).is_err());
        let r = Nonce::from_bytes([7; NONCE_LEN]);
        assert_eq!(r.to_hex().len(), 32);
        assert_eq!(Nonce::from_hex(&r.to_hex()).unwrap(), r);
        assert_eq!(format!("{k:?}"), "SecretKey(..)");
    }
}
