//! The `.fzk` container and the gated encrypt/decrypt workflow.
//!
//! All integers and floats are little-endian.
//!
//! | size | field                                        |
//! |------|----------------------------------------------|
//! | 4    | magic `FZK1`                                 |
//! | 1    | version                                      |
//! | 4    | KDF iterations                               |
//! | 16   | salt                                         |
//! | 12   | IV                                           |
//! | 8    | encryption timestamp                         |
//! | 8    | encryption CPU percent                       |
//! | 4    | encryption process count                     |
//! | 2    | F_e × 100                                    |
//! | 2+n  | sealed session secret (nonce ‖ sealed blob)  |
//! | 8+n  | ciphertext                                   |
//! | 16   | GCM tag                                      |
//!
//! The first 59 bytes (magic through F_e) are the associated data of the
//! payload encryption. They are stored in clear because the decryptor has
//! to rebuild the KDF input and the condition digest before it holds a key.

use aes_gcm::aead::AeadInPlace;
use aes_gcm::{Aes256Gcm, KeyInit, Nonce, Tag};
use thiserror::Error;
use zeroize::Zeroizing;

use crate::keyforge::{derive_key, quantize_fe, KdfError, KdfParams, QuantizedScore, DEFAULT_ITERATIONS, SALT_LEN};
use crate::kms::{fuzzy_entropy, EntropyWeights, KmsConfig, KmsError};
use crate::probe::{ConditionProvider, ConditionVector, ProbeError};
use crate::rng::{RandomSource, RandomnessError};
use crate::sealstore::{condition_digest, SealBackend, SealError, SealedSecret};

pub const MAGIC: [u8; 4] = *b"FZK1";
pub const VERSION: u8 = 1;
pub const IV_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const HEADER_LEN: usize = 4 + 1 + 4 + SALT_LEN + IV_LEN + 8 + 8 + 4 + 2;
/// GCM cannot encrypt more than 2^36 − 32 bytes under one IV.
pub const MAX_CIPHERTEXT_LEN: u64 = (1 << 36) - 32;
/// Conventional file extension.
pub const EXTENSION: &str = "fzk";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("bad magic {0:02x?}, not a fuzzkey envelope")]
    BadMagic([u8; 4]),
    #[error("unknown envelope version {0}")]
    UnknownVersion(u8),
    #[error("envelope truncated in `{field}`: need {needed} bytes, {available} left")]
    Truncated { field: &'static str, needed: u64, available: usize },
    #[error("length of `{field}` ({declared}) exceeds the format limit")]
    LengthOverflow { field: &'static str, declared: u64 },
    #[error("{0} unexpected bytes after the tag")]
    TrailingBytes(usize),
    #[error("invalid `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
}

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("condition probe failed: {0}")]
    Probe(#[from] ProbeError),
    #[error("sealing failed: {0}")]
    Seal(#[source] SealError),
    #[error("randomness unavailable: {0}")]
    Randomness(#[from] RandomnessError),
    #[error(transparent)]
    Kms(#[from] KmsError),
    #[error(transparent)]
    Kdf(#[from] KdfError),
    #[error("access denied: key match score {kms:.3} below threshold {tau:.3}")]
    Denied { kms: f64, tau: f64, no_rule_fired: bool },
    #[error("sealed secret does not match the recorded conditions")]
    Binding,
    #[error("authentication failed: ciphertext, header, password or device mismatch")]
    AuthFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub kdf_iterations: u32,
    pub salt: [u8; SALT_LEN],
    pub iv: [u8; IV_LEN],
    pub t_enc: f64,
    pub cpu_enc: f64,
    pub proc_enc: u32,
    pub fe_q: QuantizedScore,
    /// `nonce ‖ sealed blob` of the session secret.
    pub sealed: Vec<u8>,
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl Envelope {
    /// The encryption-time condition vector recorded in the header.
    pub fn conditions(&self) -> ConditionVector {
        ConditionVector { cpu_percent: self.cpu_enc, process_count: self.proc_enc, timestamp: self.t_enc }
    }

    pub fn header_bytes(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        let mut w = Writer { buf: &mut h, pos: 0 };
        w.put(&MAGIC);
        w.put(&[VERSION]);
        w.put(&self.kdf_iterations.to_le_bytes());
        w.put(&self.salt);
        w.put(&self.iv);
        w.put(&self.t_enc.to_le_bytes());
        w.put(&self.cpu_enc.to_le_bytes());
        w.put(&self.proc_enc.to_le_bytes());
        w.put(&self.fe_q.hundredths().to_le_bytes());
        h
    }

    pub fn serialize(&self) -> Vec<u8> {
        let sealed_len = u16::try_from(self.sealed.len()).expect("sealed secret fits u16");
        let mut out = Vec::with_capacity(HEADER_LEN + 2 + self.sealed.len() + 8 + self.ciphertext.len() + TAG_LEN);
        out.extend_from_slice(&self.header_bytes());
        out.extend_from_slice(&sealed_len.to_le_bytes());
        out.extend_from_slice(&self.sealed);
        out.extend_from_slice(&(self.ciphertext.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    /// Strict parse. Every length is checked against the remaining input
    /// before anything is allocated.
    pub fn parse(bytes: &[u8]) -> Result<Self, ParseError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.array("magic")?;
        if magic != MAGIC {
            return Err(ParseError::BadMagic(magic));
        }
        let [version] = r.array("version")?;
        if version != VERSION {
            return Err(ParseError::UnknownVersion(version));
        }
        let kdf_iterations = u32::from_le_bytes(r.array("kdf_iterations")?);
        KdfParams::new(kdf_iterations, [0; SALT_LEN])
            .map_err(|e| ParseError::InvalidField { field: "kdf_iterations", reason: e.to_string() })?;
        let salt = r.array("salt")?;
        let iv = r.array("iv")?;
        let t_enc = f64::from_le_bytes(r.array("t_enc")?);
        let cpu_enc = f64::from_le_bytes(r.array("cpu_enc")?);
        let proc_enc = u32::from_le_bytes(r.array("proc_enc")?);
        let fe_raw = u16::from_le_bytes(r.array("fe_q")?);
        let fe_q = QuantizedScore::from_hundredths(fe_raw)
            .map_err(|e| ParseError::InvalidField { field: "fe_q", reason: e.to_string() })?;
        let sealed_len = u16::from_le_bytes(r.array("sealed_len")?);
        let sealed = r.take("sealed", u64::from(sealed_len))?.to_vec();
        let ct_len = u64::from_le_bytes(r.array("ct_len")?);
        if ct_len > MAX_CIPHERTEXT_LEN {
            return Err(ParseError::LengthOverflow { field: "ciphertext", declared: ct_len });
        }
        let ciphertext = r.take("ciphertext", ct_len)?.to_vec();
        let tag = r.array("tag")?;
        let rest = bytes.len() - r.pos;
        if rest != 0 {
            return Err(ParseError::TrailingBytes(rest));
        }
        Ok(Self { kdf_iterations, salt, iv, t_enc, cpu_enc, proc_enc, fe_q, sealed, ciphertext, tag })
    }
}

struct Writer<'a> {
    buf: &'a mut [u8],
    pos: usize,
}

impl Writer<'_> {
    fn put(&mut self, b: &[u8]) {
        self.buf[self.pos..self.pos + b.len()].copy_from_slice(b);
        self.pos += b.len();
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, field: &'static str, n: u64) -> Result<&'a [u8], ParseError> {
        let available = self.buf.len() - self.pos;
        if n > available as u64 {
            return Err(ParseError::Truncated { field, needed: n, available });
        }
        let n = n as usize;
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, field: &'static str) -> Result<[u8; N], ParseError> {
        Ok(self.take(field, N as u64)?.try_into().expect("length checked"))
    }
}

/// Knobs for [`encrypt`].
#[derive(Debug, Clone, Copy)]
pub struct EncryptOptions {
    pub iterations: u32,
    pub weights: EntropyWeights,
}

impl Default for EncryptOptions {
    fn default() -> Self {
        Self { iterations: DEFAULT_ITERATIONS, weights: EntropyWeights::default() }
    }
}

/// Encrypt `plaintext` under a key bound to the current conditions.
///
/// `rng` supplies the session secret, seal nonce, salt and IV.
pub fn encrypt(
    plaintext: &[u8],
    password: &[u8],
    provider: &mut ConditionProvider,
    backend: &dyn SealBackend,
    rng: &mut RandomSource,
    opts: &EncryptOptions,
) -> Result<Envelope, EnvelopeError> {
    if password.is_empty() {
        return Err(KmsError::EmptyPassword.into());
    }
    KdfParams::new(opts.iterations, [0; SALT_LEN])?;
    if plaintext.len() as u64 > MAX_CIPHERTEXT_LEN {
        return Err(ParseError::LengthOverflow { field: "plaintext", declared: plaintext.len() as u64 }.into());
    }
    let cv = provider.sample()?;
    let fe_q = quantize_fe(fuzzy_entropy(&cv, password, &opts.weights)?);

    let session: Zeroizing<[u8; 32]> = Zeroizing::new(rng.array()?);
    let digest = condition_digest(&cv, fe_q);
    let sealed = backend.seal(&session, &digest, rng).map_err(EnvelopeError::Seal)?;

    let params = KdfParams::new(opts.iterations, rng.array()?)?;
    let iv: [u8; IV_LEN] = rng.array()?;
    let key = derive_key(password, fe_q, cv.timestamp, &session, &params);

    let mut env = Envelope {
        kdf_iterations: params.iterations(),
        salt: *params.salt(),
        iv,
        t_enc: cv.timestamp,
        cpu_enc: cv.cpu_percent,
        proc_enc: cv.process_count,
        fe_q,
        sealed: sealed.to_bytes(),
        ciphertext: plaintext.to_vec(),
        tag: [0; TAG_LEN],
    };
    let aad = env.header_bytes();
    let tag = Aes256Gcm::new(key.as_bytes().into())
        .encrypt_in_place_detached(Nonce::from_slice(&env.iv), &aad, &mut env.ciphertext)
        .expect("length bounded above");
    env.tag = tag.into();
    Ok(env)
}

/// Decrypt after the fuzzy gate admits the current conditions.
///
/// A denial happens before any key material is touched. No plaintext is
/// returned on any error path.
pub fn decrypt(
    env: &Envelope,
    password: &[u8],
    provider: &mut ConditionProvider,
    backend: &dyn SealBackend,
    config: &KmsConfig,
) -> Result<Zeroizing<Vec<u8>>, EnvelopeError> {
    let now = provider.sample()?;
    let kms = config.compute_kms(&now, env.t_enc);
    if !config.admits(&kms) {
        return Err(EnvelopeError::Denied {
            kms: kms.value,
            tau: config.threshold(),
            no_rule_fired: kms.no_rule_fired,
        });
    }

    let digest = condition_digest(&env.conditions(), env.fe_q);
    // Any failure to open the sealed secret means the recorded conditions
    // (or the sealed bytes themselves) are not what was sealed.
    let sealed = SealedSecret::from_bytes(&env.sealed, digest).map_err(|_| EnvelopeError::Binding)?;
    let session = backend.unseal(&sealed, &digest).map_err(|_| EnvelopeError::Binding)?;

    let params = KdfParams::new(env.kdf_iterations, env.salt)?;
    let key = derive_key(password, env.fe_q, env.t_enc, &session, &params);

    let mut buf = Zeroizing::new(env.ciphertext.clone());
    Aes256Gcm::new(key.as_bytes().into())
        .decrypt_in_place_detached(Nonce::from_slice(&env.iv), &env.header_bytes(), &mut buf, Tag::from_slice(&env.tag))
        .map_err(|_| EnvelopeError::AuthFailure)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyforge::MIN_ITERATIONS;
    use crate::sealstore::{DeviceRoot, SoftwareTpm};
    use proptest::prelude::*;

    const T0: f64 = 1_700_000_000.25;

    fn tpm(seed: u64) -> SoftwareTpm {
        SoftwareTpm::new(DeviceRoot::ephemeral(&mut RandomSource::insecure_seeded(seed)).unwrap())
    }

    fn at(cpu: f64, proc: u32, t: f64) -> ConditionProvider {
        ConditionProvider::fixed(ConditionVector::new(cpu, proc, t).unwrap())
    }

    fn fast() -> EncryptOptions {
        EncryptOptions { iterations: MIN_ITERATIONS, ..Default::default() }
    }

    fn sample_env(tpm: &SoftwareTpm) -> Envelope {
        encrypt(b"attack at dawn", b"Str0ng!pass", &mut at(25.0, 65, T0), tpm, &mut RandomSource::Os, &fast()).unwrap()
    }

    #[test]
    fn roundtrip_same_conditions() {
        let t = tpm(1);
        let env = sample_env(&t);
        let cfg = KmsConfig::default();
        let pt = decrypt(&env, b"Str0ng!pass", &mut at(25.0, 65, T0 + 1.1), &t, &cfg).unwrap();
        assert_eq!(&pt[..], b"attack at dawn");
    }

    #[test]
    fn encryptions_use_fresh_iv() {
        let t = tpm(2);
        let (a, b) = (sample_env(&t), sample_env(&t));
        assert_ne!(a.iv, b.iv);
        assert_ne!(a.ciphertext, b.ciphertext);
        assert_ne!(a.salt, b.salt);
    }

    #[test]
    fn serialized_layout() {
        let env = sample_env(&tpm(3));
        let bytes = env.serialize();
        assert_eq!(&bytes[..4], b"FZK1");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[..HEADER_LEN], &env.header_bytes());
        assert_eq!(bytes.len(), HEADER_LEN + 2 + 60 + 8 + 14 + TAG_LEN);
        assert_eq!(Envelope::parse(&bytes).unwrap(), env);
        assert_eq!(Envelope::parse(&bytes).unwrap().serialize(), bytes);
    }

    #[test]
    fn seeded_rng_is_deterministic() {
        let t = tpm(4);
        let run = || {
            encrypt(b"x", b"pw", &mut at(10.0, 5, T0), &t, &mut RandomSource::insecure_seeded(9), &fast())
                .unwrap()
                .serialize()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gate_denies_on_drift_and_load() {
        let t = tpm(5);
        let env = sample_env(&t);
        let err = decrypt(&env, b"Str0ng!pass", &mut at(75.0, 180, T0 + 7.9), &t, &KmsConfig::default()).unwrap_err();
        match err {
            EnvelopeError::Denied { kms, tau, .. } => {
                assert!(kms < tau);
                assert!((kms - 0.28).abs() <= 0.15, "{kms}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn wrong_password_or_device_fails_auth() {
        let t = tpm(6);
        let env = sample_env(&t);
        let cfg = KmsConfig::default();
        assert!(matches!(decrypt(&env, b"wrong", &mut at(25.0, 65, T0), &t, &cfg), Err(EnvelopeError::AuthFailure)));
        assert!(matches!(
            decrypt(&env, b"Str0ng!pass", &mut at(25.0, 65, T0), &tpm(7), &cfg),
            Err(EnvelopeError::Binding)
        ));
    }

    #[test]
    fn flipped_ciphertext_or_tag_fails_auth() {
        let t = tpm(8);
        let env = sample_env(&t);
        let cfg = KmsConfig::default();
        let mut e = env.clone();
        e.ciphertext[3] ^= 0x10;
        assert!(matches!(
            decrypt(&e, b"Str0ng!pass", &mut at(25.0, 65, T0), &t, &cfg),
            Err(EnvelopeError::AuthFailure)
        ));
        let mut e = env.clone();
        e.tag[15] ^= 0x01;
        assert!(matches!(
            decrypt(&e, b"Str0ng!pass", &mut at(25.0, 65, T0), &t, &cfg),
            Err(EnvelopeError::AuthFailure)
        ));
        let mut e = env;
        e.salt[0] ^= 0x01;
        assert!(matches!(
            decrypt(&e, b"Str0ng!pass", &mut at(25.0, 65, T0), &t, &cfg),
            Err(EnvelopeError::AuthFailure)
        ));
    }

    #[test]
    fn altered_metadata_breaks_binding() {
        let t = tpm(9);
        let env = sample_env(&t);
        let cfg = KmsConfig::default();
        let mut e = env.clone();
        e.proc_enc += 1;
        assert!(matches!(decrypt(&e, b"Str0ng!pass", &mut at(25.0, 65, T0), &t, &cfg), Err(EnvelopeError::Binding)));
        let mut e = env;
        e.fe_q = QuantizedScore::from_hundredths((e.fe_q.hundredths() + 1) % 101).unwrap();
        assert!(matches!(decrypt(&e, b"Str0ng!pass", &mut at(25.0, 65, T0), &t, &cfg), Err(EnvelopeError::Binding)));
    }

    #[test]
    fn parse_errors_are_named() {
        let bytes = sample_env(&tpm(10)).serialize();
        let mut b = bytes.clone();
        b[..4].copy_from_slice(b"XXXX");
        assert_eq!(Envelope::parse(&b), Err(ParseError::BadMagic(*b"XXXX")));
        let mut b = bytes.clone();
        b[4] = 2;
        assert_eq!(Envelope::parse(&b), Err(ParseError::UnknownVersion(2)));
        for cut in 0..bytes.len() {
            assert!(matches!(Envelope::parse(&bytes[..cut]), Err(ParseError::Truncated { .. })), "cut at {cut}");
        }
        let mut b = bytes.clone();
        b.push(0);
        assert_eq!(Envelope::parse(&b), Err(ParseError::TrailingBytes(1)));
        let ct_off = HEADER_LEN + 2 + 60;
        let mut b = bytes.clone();
        b[ct_off..ct_off + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(Envelope::parse(&b), Err(ParseError::LengthOverflow { .. })));
        let mut b = bytes;
        b[5..9].copy_from_slice(&1u32.to_le_bytes());
        assert!(matches!(Envelope::parse(&b), Err(ParseError::InvalidField { field: "kdf_iterations", .. })));
    }

    #[test]
    fn empty_password_is_rejected() {
        let err = encrypt(b"x", b"", &mut at(1.0, 1, T0), &tpm(11), &mut RandomSource::Os, &fast()).unwrap_err();
        assert!(matches!(err, EnvelopeError::Kms(KmsError::EmptyPassword)));
    }

    #[test]
    fn probe_failure_surfaces() {
        let mut p = ConditionProvider::scripted([ConditionVector::new(1.0, 1, T0).unwrap()]).unwrap();
        let t = tpm(12);
        let env = encrypt(b"x", b"pw", &mut p, &t, &mut RandomSource::Os, &fast()).unwrap();
        let err = decrypt(&env, b"pw", &mut p, &t, &KmsConfig::default()).unwrap_err();
        assert!(matches!(err, EnvelopeError::Probe(ProbeError::Exhausted)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn parse_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
            let _ = Envelope::parse(&bytes);
        }

        #[test]
        fn parse_with_valid_prefix_never_panics(tail in prop::collection::vec(any::<u8>(), 0..200)) {
            let mut b = MAGIC.to_vec();
            b.push(VERSION);
            b.extend_from_slice(&tail);
            let _ = Envelope::parse(&b);
        }
    }
}
