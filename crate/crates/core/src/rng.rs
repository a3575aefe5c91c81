//! Randomness for salts, IVs, nonces and session secrets.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("secure randomness unavailable: {0}")]
pub struct RandomnessError(String);

/// Source of key material randomness.
///
/// `Os` is the only source suitable for real use. `InsecureSeeded` exists so
/// tests and reproducible demos can pin every random draw.
pub enum RandomSource {
    Os,
    InsecureSeeded(Box<ChaCha20Rng>),
}

impl RandomSource {
    pub fn insecure_seeded(seed: u64) -> Self {
        RandomSource::InsecureSeeded(Box::new(ChaCha20Rng::seed_from_u64(seed)))
    }

    pub fn fill(&mut self, buf: &mut [u8]) -> Result<(), RandomnessError> {
        match self {
            RandomSource::Os => getrandom::getrandom(buf).map_err(|e| RandomnessError(e.to_string())),
            RandomSource::InsecureSeeded(rng) => {
                rng.fill_bytes(buf);
                Ok(())
            }
        }
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], RandomnessError> {
        let mut out = [0u8; N];
        self.fill(&mut out)?;
        Ok(out)
    }
}

impl std::fmt::Debug for RandomSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RandomSource::Os => f.write_str("RandomSource::Os"),
            RandomSource::InsecureSeeded(_) => f.write_str("RandomSource::InsecureSeeded"),
        }
    }
}
