//! Condition-bound encryption gated by a fuzzy key-match score.
//!
//! System conditions at encryption time (CPU load, process count, clock)
//! feed a fuzzy entropy score that is mixed into the key. At decryption a
//! Mamdani inference system compares the current conditions with the
//! recorded ones; only a key-match score at or above the threshold lets the
//! sealed session secret be opened and the key re-derived.
//!
//! ```no_run
//! use fuzzkey::{decrypt, encrypt, ConditionProvider, EncryptOptions, KmsConfig, RandomSource, SoftwareTpm};
//!
//! let tpm = SoftwareTpm::open("/tmp/fuzzkey.store")?;
//! let mut rng = RandomSource::Os;
//! let env = encrypt(b"hello", b"pw", &mut ConditionProvider::live(), &tpm, &mut rng, &EncryptOptions::default())?;
//! let plain = decrypt(&env, b"pw", &mut ConditionProvider::live(), &tpm, &KmsConfig::default())?;
//! assert_eq!(&plain[..], b"hello");
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod config;
pub mod entropy;
pub mod envelope;
pub mod fuzzy;
pub mod keyforge;
pub mod kms;
pub mod probe;
pub mod report;
pub mod rng;
pub mod sealstore;

pub use config::{ConfigError, FisConfig};
pub use entropy::shannon_entropy;
pub use envelope::{decrypt, encrypt, EncryptOptions, Envelope, EnvelopeError, ParseError};
pub use fuzzy::{FuzzyError, FuzzyVariable, MamdaniSystem, MembershipFunction, Rule, RuleBase};
pub use keyforge::{derive_key, quantize_fe, DerivedKey, KdfParams, QuantizedScore};
pub use kms::{entropy_score, fuzzy_entropy, EntropyWeights, KeyMatchScore, KmsConfig, KmsError};
pub use probe::{drift, ConditionProvider, ConditionVector, ProbeError};
pub use rng::RandomSource;
pub use sealstore::{
    condition_digest, init_device_root, DeviceRoot, SealBackend, SealError, SealedSecret, SoftwareTpm,
};
