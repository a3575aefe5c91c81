//! Final key derivation.
//!
//! ```text
//! input  = P ‖ "_" ‖ F_e (2 decimals) ‖ "_" ‖ T_enc (3 decimals)
//! secret = SHA-256(input ‖ sealed session secret)
//! key    = PBKDF2-HMAC-SHA256(secret, salt, iterations, 32 bytes)
//! ```
//!
//! F_e is quantized before use and stored alongside the ciphertext so the
//! decryptor rebuilds the identical input string.

use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;
use zeroize::Zeroizing;

use crate::rng::{RandomSource, RandomnessError};

pub const KEY_LEN: usize = 32;
pub const SALT_LEN: usize = 16;
pub const MIN_ITERATIONS: u32 = 10_000;
pub const DEFAULT_ITERATIONS: u32 = 100_000;
/// Upper bound accepted from stored parameters, so a corrupted iteration
/// count cannot stall a decryptor for minutes.
pub const MAX_ITERATIONS: u32 = 4_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KdfError {
    #[error("kdf iterations {0} outside [{MIN_ITERATIONS}, {MAX_ITERATIONS}]")]
    Iterations(u32),
    #[error("quantized score {0} exceeds 100 hundredths")]
    Score(u16),
}

/// F_e rounded to hundredths, stored as an integer `0..=100`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QuantizedScore(u16);

impl QuantizedScore {
    pub fn from_hundredths(h: u16) -> Result<Self, KdfError> {
        if h > 100 {
            return Err(KdfError::Score(h));
        }
        Ok(Self(h))
    }

    pub fn hundredths(self) -> u16 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0) / 100.0
    }
}

impl fmt::Display for QuantizedScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

/// Round half-up to two decimals. The small bias absorbs binary
/// representation error so that decimal ties such as 0.735 round up.
pub fn quantize_fe(fe: f64) -> QuantizedScore {
    let fe = if fe.is_nan() { 0.0 } else { fe.clamp(0.0, 1.0) };
    let h = (fe * 100.0 + 0.5 + 1e-9).floor();
    QuantizedScore(h.min(100.0) as u16)
}

/// `P ‖ "_" ‖ F_e ‖ "_" ‖ T_enc`, byte-exact.
///
/// A password containing `_` can alias another (password, score) split;
/// the format is kept as is so the string stays human-checkable.
pub fn build_kdf_input(password: &[u8], fe: QuantizedScore, t_enc: f64) -> Vec<u8> {
    let tail = format!("_{fe}_{t_enc:.3}");
    let mut out = Vec::with_capacity(password.len() + tail.len());
    out.extend_from_slice(password);
    out.extend_from_slice(tail.as_bytes());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KdfParams {
    iterations: u32,
    salt: [u8; SALT_LEN],
}

impl KdfParams {
    pub fn new(iterations: u32, salt: [u8; SALT_LEN]) -> Result<Self, KdfError> {
        if !(MIN_ITERATIONS..=MAX_ITERATIONS).contains(&iterations) {
            return Err(KdfError::Iterations(iterations));
        }
        Ok(Self { iterations, salt })
    }

    pub fn iterations(&self) -> u32 {
        self.iterations
    }

    pub fn salt(&self) -> &[u8; SALT_LEN] {
        &self.salt
    }
}

pub struct DerivedKey {
    bytes: Zeroizing<[u8; KEY_LEN]>,
    #[cfg(debug_assertions)]
    transcript: Vec<u8>,
}

impl DerivedKey {
    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }

    /// The exact KDF input string. Debug builds only.
    #[cfg(debug_assertions)]
    pub fn transcript(&self) -> &[u8] {
        &self.transcript
    }
}

impl fmt::Debug for DerivedKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DerivedKey(<redacted>)")
    }
}

pub fn derive_key(
    password: &[u8],
    fe: QuantizedScore,
    t_enc: f64,
    tpm_secret: &[u8; 32],
    params: &KdfParams,
) -> DerivedKey {
    let input = Zeroizing::new(build_kdf_input(password, fe, t_enc));
    let mut h = Sha256::new();
    h.update(&*input);
    h.update(tpm_secret);
    let secret = Zeroizing::new(<[u8; 32]>::from(h.finalize()));
    let mut bytes = Zeroizing::new([0u8; KEY_LEN]);
    pbkdf2::pbkdf2_hmac::<Sha256>(&*secret, &params.salt, params.iterations, &mut *bytes);
    DerivedKey {
        bytes,
        #[cfg(debug_assertions)]
        transcript: input.to_vec(),
    }
}

pub fn generate_salt(rng: &mut RandomSource) -> Result<[u8; SALT_LEN], RandomnessError> {
    rng.array()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(h: u16) -> QuantizedScore {
        QuantizedScore::from_hundredths(h).unwrap()
    }

    #[test]
    fn kdf_input_format() {
        assert_eq!(build_kdf_input(b"secretMessage", q(73), 168243.229), b"secretMessage_0.73_168243.229");
        assert_eq!(build_kdf_input(b"p", q(0), 1.0), b"p_0.00_1.000");
        assert_eq!(build_kdf_input(b"p", quantize_fe(0.5), 2.5), b"p_0.50_2.500");
        assert_eq!(build_kdf_input(b"p", q(100), 1.0), b"p_1.00_1.000");
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize_fe(0.7349), q(73));
        assert_eq!(quantize_fe(0.735), q(74));
        assert_eq!(quantize_fe(1.0), q(100));
        assert_eq!(quantize_fe(1.0).to_string(), "1.00");
        assert_eq!(quantize_fe(0.0), q(0));
        assert_eq!(quantize_fe(0.005), q(1));
        assert_eq!(quantize_fe(0.004_999), q(0));
        assert!(QuantizedScore::from_hundredths(101).is_err());
    }

    #[test]
    fn params_bounds() {
        assert!(KdfParams::new(MIN_ITERATIONS - 1, [0; 16]).is_err());
        assert!(KdfParams::new(MAX_ITERATIONS + 1, [0; 16]).is_err());
        assert!(KdfParams::new(DEFAULT_ITERATIONS, [0; 16]).is_ok());
    }

    /// Known answer computed with Python's `hashlib`:
    ///
    /// ```python
    /// s = hashlib.sha256(b"secretMessage_0.73_168243.229" + bytes(32)).digest()
    /// hashlib.pbkdf2_hmac("sha256", s, bytes(16), 100000, 32).hex()
    /// ```
    #[test]
    fn golden_vector() {
        let params = KdfParams::new(100_000, [0u8; 16]).unwrap();
        let key = derive_key(b"secretMessage", q(73), 168243.229, &[0u8; 32], &params);
        assert_eq!(hex::encode(key.as_bytes()), "0e14dded58c7a087a28bb367e9d9d6706e60b0787605d952482330435409b942");
        #[cfg(debug_assertions)]
        assert_eq!(key.transcript(), b"secretMessage_0.73_168243.229");
    }

    #[test]
    fn deterministic_and_salt_sensitive() {
        let p1 = KdfParams::new(MIN_ITERATIONS, [1u8; 16]).unwrap();
        let mut salt = [1u8; 16];
        salt[15] ^= 1;
        let p2 = KdfParams::new(MIN_ITERATIONS, salt).unwrap();
        let a = derive_key(b"pw", q(50), 10.0, &[9u8; 32], &p1);
        let b = derive_key(b"pw", q(50), 10.0, &[9u8; 32], &p1);
        let c = derive_key(b"pw", q(50), 10.0, &[9u8; 32], &p2);
        assert_eq!(a.as_bytes(), b.as_bytes());
        assert_ne!(a.as_bytes(), c.as_bytes());
    }

    #[test]
    fn salts_are_fresh() {
        let mut rng = RandomSource::Os;
        let a = generate_salt(&mut rng).unwrap();
        let b = generate_salt(&mut rng).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn pooled_salts_look_uniform() {
        let mut rng = RandomSource::Os;
        let mut pool = Vec::with_capacity(16_000);
        for _ in 0..1000 {
            pool.extend_from_slice(&generate_salt(&mut rng).unwrap());
        }
        let h = crate::entropy::shannon_entropy(&pool).unwrap();
        assert!(h > 7.5, "{h}");
    }

    #[test]
    fn debug_output_redacts_key() {
        let params = KdfParams::new(MIN_ITERATIONS, [0u8; 16]).unwrap();
        let key = derive_key(b"pw", q(1), 1.0, &[0u8; 32], &params);
        assert_eq!(format!("{key:?}"), "DerivedKey(<redacted>)");
    }

    proptest! {
        #[test]
        fn kdf_input_injective_without_underscores(
            p1 in "[a-zA-Z0-9]{1,12}", p2 in "[a-zA-Z0-9]{1,12}",
            f1 in 0u16..=100, f2 in 0u16..=100,
            t1 in 1u64..10_000_000, t2 in 1u64..10_000_000,
        ) {
            let (t1, t2) = (t1 as f64 / 1000.0, t2 as f64 / 1000.0);
            let a = build_kdf_input(p1.as_bytes(), q(f1), t1);
            let b = build_kdf_input(p2.as_bytes(), q(f2), t2);
            prop_assert_eq!(a == b, p1 == p2 && f1 == f2 && t1 == t2);
        }
    }
}
