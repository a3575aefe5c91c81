//! TPM-style key protection in software.
//!
//! A device root secret lives in a small store file and never leaves this
//! module. Per-envelope session secrets are sealed under a key derived from
//! the root with AES-256-GCM, using the digest of the encryption-time
//! conditions as associated data, so a sealed secret only opens on the same
//! device and against the same recorded conditions.
//!
//! Store file layout (53 bytes):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `FZKS`                            |
//! | 4      | 1    | version `0x01`                          |
//! | 5      | 32   | root secret                             |
//! | 37     | 16   | GCM tag over magic ‖ version ‖ secret   |

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use aes_gcm::aead::{Aead, AeadInPlace, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce, Tag};
use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};
use thiserror::Error;
use zeroize::Zeroizing;

use crate::keyforge::QuantizedScore;
use crate::probe::ConditionVector;
use crate::rng::{RandomSource, RandomnessError};

pub const STORE_MAGIC: [u8; 4] = *b"FZKS";
pub const STORE_VERSION: u8 = 0x01;
pub const STORE_LEN: usize = 4 + 1 + 32 + 16;
/// Environment variable naming the store file.
pub const STORE_ENV: &str = "FUZZKEY_STORE";

pub const SEAL_NONCE_LEN: usize = 12;
/// Sealed 32-byte secret plus GCM tag.
pub const SEAL_BLOB_LEN: usize = 32 + 16;

const SEAL_LABEL: &[u8] = b"fuzzkey/seal/v1";
const CHECK_LABEL: &[u8] = b"fuzzkey/store-check/v1";
const TAG_LABEL: &[u8] = b"fuzzkey/device-tag/v1";

#[derive(Debug, Error)]
pub enum SealError {
    #[error("sealstore {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("sealstore {path} is corrupted: {reason}")]
    Corrupted { path: PathBuf, reason: &'static str },
    #[error("sealstore {path} has unsupported version {version}")]
    UnsupportedVersion { path: PathBuf, version: u8 },
    #[error(transparent)]
    Randomness(#[from] RandomnessError),
    #[error("binding digest does not match the sealed conditions")]
    Binding,
    #[error("sealed secret failed authentication")]
    Authentication,
    #[error("sealed secret has length {0}, expected {len}", len = SEAL_NONCE_LEN + SEAL_BLOB_LEN)]
    Malformed(usize),
}

/// The device-bound root secret.
pub struct DeviceRoot {
    secret: Zeroizing<[u8; 32]>,
    created_at: SystemTime,
    device_tag: String,
}

impl DeviceRoot {
    fn from_secret(secret: [u8; 32], created_at: SystemTime) -> Self {
        let secret = Zeroizing::new(secret);
        let tag = hmac_sha256(&*secret, TAG_LABEL);
        Self { device_tag: hex::encode(&tag[..8]), secret, created_at }
    }

    /// A fresh root that is never persisted.
    pub fn ephemeral(rng: &mut RandomSource) -> Result<Self, SealError> {
        Ok(Self::from_secret(rng.array()?, SystemTime::now()))
    }

    pub fn created_at(&self) -> SystemTime {
        self.created_at
    }

    /// Public identifier derived one-way from the root secret.
    pub fn device_tag(&self) -> &str {
        &self.device_tag
    }

    fn seal_cipher(&self) -> Aes256Gcm {
        let k = Zeroizing::new(hmac_sha256(&*self.secret, SEAL_LABEL));
        Aes256Gcm::new_from_slice(&*k).expect("32-byte key")
    }

    fn store_check_tag(&self) -> [u8; 16] {
        let k = Zeroizing::new(hmac_sha256(&*self.secret, CHECK_LABEL));
        let cipher = Aes256Gcm::new_from_slice(&*k).expect("32-byte key");
        let aad = Zeroizing::new(store_header(&self.secret));
        let tag =
            cipher.encrypt_in_place_detached(Nonce::from_slice(&[0u8; 12]), &aad, &mut []).expect("empty plaintext");
        tag.into()
    }
}

impl fmt::Debug for DeviceRoot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeviceRoot")
            .field("device_tag", &self.device_tag)
            .field("created_at", &self.created_at)
            .finish_non_exhaustive()
    }
}

fn hmac_sha256(key: &[u8], msg: &[u8]) -> [u8; 32] {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(key).expect("hmac takes any key length");
    mac.update(msg);
    mac.finalize().into_bytes().into()
}

fn store_header(secret: &[u8; 32]) -> Vec<u8> {
    let mut v = Vec::with_capacity(37);
    v.extend_from_slice(&STORE_MAGIC);
    v.push(STORE_VERSION);
    v.extend_from_slice(secret);
    v
}

/// Load the root from `path`, creating it on first use.
///
/// The file is held under an exclusive advisory lock while it is read or
/// written. A file that fails its integrity check is reported, never
/// regenerated.
pub fn init_device_root(path: impl AsRef<Path>) -> Result<DeviceRoot, SealError> {
    init_device_root_with(path, &mut RandomSource::Os)
}

pub fn init_device_root_with(path: impl AsRef<Path>, rng: &mut RandomSource) -> Result<DeviceRoot, SealError> {
    let path = path.as_ref();
    let io = |source| SealError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let mut file = open_store(path).map_err(io)?;
    file.lock().map_err(io)?;
    let mut bytes = Zeroizing::new(Vec::new());
    file.read_to_end(&mut bytes).map_err(io)?;
    let created_at = file.metadata().and_then(|m| m.modified()).unwrap_or_else(|_| SystemTime::now());

    if bytes.is_empty() {
        let root = DeviceRoot::from_secret(rng.array()?, created_at);
        let mut out = Zeroizing::new(store_header(&root.secret));
        out.extend_from_slice(&root.store_check_tag());
        file.seek(SeekFrom::Start(0)).map_err(io)?;
        file.write_all(&out).map_err(io)?;
        file.sync_all().map_err(io)?;
        return Ok(root);
    }

    let corrupted = |reason| SealError::Corrupted { path: path.to_path_buf(), reason };
    if bytes.len() < 5 || bytes[..4] != STORE_MAGIC {
        return Err(corrupted("bad magic"));
    }
    if bytes[4] != STORE_VERSION {
        return Err(SealError::UnsupportedVersion { path: path.to_path_buf(), version: bytes[4] });
    }
    if bytes.len() != STORE_LEN {
        return Err(corrupted("unexpected length"));
    }
    let mut secret = [0u8; 32];
    secret.copy_from_slice(&bytes[5..37]);
    let root = DeviceRoot::from_secret(secret, created_at);
    let mut stored = [0u8; 16];
    file.seek(SeekFrom::Start(37)).map_err(io)?;
    file.read_exact(&mut stored).map_err(io)?;
    if !verify_check_tag(&root, &stored) {
        return Err(corrupted("integrity check failed"));
    }
    Ok(root)
}

fn verify_check_tag(root: &DeviceRoot, stored: &[u8; 16]) -> bool {
    let k = Zeroizing::new(hmac_sha256(&*root.secret, CHECK_LABEL));
    let cipher = Aes256Gcm::new_from_slice(&*k).expect("32-byte key");
    let aad = Zeroizing::new(store_header(&root.secret));
    cipher.decrypt_in_place_detached(Nonce::from_slice(&[0u8; 12]), &aad, &mut [], Tag::from_slice(stored)).is_ok()
}

#[cfg(unix)]
fn open_store(path: &Path) -> std::io::Result<File> {
    use std::os::unix::fs::OpenOptionsExt;
    OpenOptions::new().read(true).write(true).create(true).truncate(false).mode(0o600).open(path)
}

#[cfg(not(unix))]
fn open_store(path: &Path) -> std::io::Result<File> {
    OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)
}

/// A session secret sealed against a condition digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedSecret {
    pub nonce: [u8; SEAL_NONCE_LEN],
    pub blob: Vec<u8>,
    pub binding_digest: [u8; 32],
}

impl SealedSecret {
    /// `nonce ‖ blob`, as carried in an envelope.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(SEAL_NONCE_LEN + self.blob.len());
        v.extend_from_slice(&self.nonce);
        v.extend_from_slice(&self.blob);
        v
    }

    pub fn from_bytes(bytes: &[u8], binding_digest: [u8; 32]) -> Result<Self, SealError> {
        if bytes.len() != SEAL_NONCE_LEN + SEAL_BLOB_LEN {
            return Err(SealError::Malformed(bytes.len()));
        }
        let mut nonce = [0u8; SEAL_NONCE_LEN];
        nonce.copy_from_slice(&bytes[..SEAL_NONCE_LEN]);
        Ok(Self { nonce, blob: bytes[SEAL_NONCE_LEN..].to_vec(), binding_digest })
    }
}

/// Something that can seal and unseal 32-byte secrets against a digest.
pub trait SealBackend {
    fn seal(
        &self,
        secret: &[u8; 32],
        binding_digest: &[u8; 32],
        rng: &mut RandomSource,
    ) -> Result<SealedSecret, SealError>;

    fn unseal(&self, sealed: &SealedSecret, binding_digest: &[u8; 32]) -> Result<Zeroizing<[u8; 32]>, SealError>;

    fn device_tag(&self) -> &str;
}

/// Software emulation of a TPM storage hierarchy rooted in a [`DeviceRoot`].
#[derive(Debug)]
pub struct SoftwareTpm {
    root: DeviceRoot,
}

impl SoftwareTpm {
    pub fn new(root: DeviceRoot) -> Self {
        Self { root }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, SealError> {
        Ok(Self::new(init_device_root(path)?))
    }

    pub fn root(&self) -> &DeviceRoot {
        &self.root
    }
}

impl SealBackend for SoftwareTpm {
    fn seal(
        &self,
        secret: &[u8; 32],
        binding_digest: &[u8; 32],
        rng: &mut RandomSource,
    ) -> Result<SealedSecret, SealError> {
        seal(&self.root, secret, binding_digest, rng)
    }

    fn unseal(&self, sealed: &SealedSecret, binding_digest: &[u8; 32]) -> Result<Zeroizing<[u8; 32]>, SealError> {
        unseal(&self.root, sealed, binding_digest)
    }

    fn device_tag(&self) -> &str {
        self.root.device_tag()
    }
}

pub fn seal(
    root: &DeviceRoot,
    secret: &[u8; 32],
    binding_digest: &[u8; 32],
    rng: &mut RandomSource,
) -> Result<SealedSecret, SealError> {
    let nonce: [u8; SEAL_NONCE_LEN] = rng.array()?;
    let blob = root
        .seal_cipher()
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: secret, aad: binding_digest })
        .expect("in-memory AES-GCM encryption does not fail");
    Ok(SealedSecret { nonce, blob, binding_digest: *binding_digest })
}

/// Recover the session secret.
///
/// A digest that differs from the one recorded in `sealed` is a binding
/// error; anything that fails AEAD verification (tampered blob, tampered
/// recorded digest, other device) is an authentication error.
pub fn unseal(
    root: &DeviceRoot,
    sealed: &SealedSecret,
    binding_digest: &[u8; 32],
) -> Result<Zeroizing<[u8; 32]>, SealError> {
    if sealed.binding_digest != *binding_digest {
        return Err(SealError::Binding);
    }
    let plain = Zeroizing::new(
        root.seal_cipher()
            .decrypt(Nonce::from_slice(&sealed.nonce), Payload { msg: &sealed.blob, aad: &sealed.binding_digest })
            .map_err(|_| SealError::Authentication)?,
    );
    let secret: [u8; 32] = plain.as_slice().try_into().map_err(|_| SealError::Authentication)?;
    Ok(Zeroizing::new(secret))
}

/// SHA-256 over `cpu (f64 LE) ‖ process_count (u32 LE) ‖ timestamp (f64 LE) ‖ F_e·100 (u16 LE)`.
pub fn condition_digest(cv: &ConditionVector, fe: QuantizedScore) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(cv.cpu_percent.to_le_bytes());
    h.update(cv.process_count.to_le_bytes());
    h.update(cv.timestamp.to_le_bytes());
    h.update(fe.hundredths().to_le_bytes());
    h.finalize().into()
}
