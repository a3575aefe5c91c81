//! Simulations and measurements behind the CLI's `simulate`,
//! `entropy-report` and `bench` commands.

use std::time::Instant;

use thiserror::Error;

use crate::entropy::shannon_entropy;
use crate::envelope::{decrypt, encrypt, EncryptOptions, EnvelopeError};
use crate::keyforge::{derive_key, generate_salt, KdfError, KdfParams, QuantizedScore};
use crate::kms::{fuzzy_entropy, EntropyWeights, KmsConfig, KmsError};
use crate::probe::{ConditionProvider, ConditionVector, ProbeError};
use crate::rng::{RandomSource, RandomnessError};
use crate::sealstore::SealBackend;

/// Pass mark for pooled key bytes, in bits per byte.
pub const ENTROPY_THRESHOLD: f64 = 7.9;
pub const MIN_ENTROPY_KEYS: usize = 100;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid sweep: {0}")]
    Sweep(String),
    #[error("need at least {MIN_ENTROPY_KEYS} keys, got {0}")]
    TooFewKeys(usize),
    #[error("bench needs at least one run")]
    NoRuns,
    #[error(transparent)]
    Kms(#[from] KmsError),
    #[error(transparent)]
    Kdf(#[from] KdfError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Randomness(#[from] RandomnessError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

/// A drift sweep at fixed load.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub cpu_percent: f64,
    pub process_count: u32,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    /// Encryption timestamp the drift is measured from.
    pub t_enc: f64,
    /// Password used for the F_e column.
    pub password: Vec<u8>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            cpu_percent: 25.0,
            process_count: 65,
            start: 0.0,
            stop: 10.0,
            step: 0.5,
            t_enc: 168_243.229,
            password: b"secretMessage".to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub drift: f64,
    pub kms: f64,
    pub fe: f64,
}

impl SweepSpec {
    fn steps(&self) -> Result<usize, ReportError> {
        let bad = |m: &str| Err(ReportError::Sweep(m.to_string()));
        if ![self.start, self.stop, self.step, self.t_enc].iter().all(|v| v.is_finite()) {
            return bad("non-finite value");
        }
        if self.step <= 0.0 {
            return bad("step must be positive");
        }
        if self.start < 0.0 || self.stop < self.start {
            return bad("need 0 <= start <= stop");
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor();
        if n > 1e6 {
            return bad("more than a million rows");
        }
        Ok(n as usize + 1)
    }
}

/// One row per step from `start` to `stop` inclusive. The F_e column is the
/// score the decrypting side would compute at `t_enc + drift`.
pub fn drift_sweep(
    config: &KmsConfig,
    spec: &SweepSpec,
    weights: &EntropyWeights,
) -> Result<Vec<SweepRow>, ReportError> {
    let n = spec.steps()?;
    let cv0 = ConditionVector::new(spec.cpu_percent, spec.process_count, spec.t_enc)?;
    (0..n)
        .map(|i| {
            let drift = spec.start + i as f64 * spec.step;
            let kms = config.score(spec.cpu_percent, f64::from(spec.process_count), drift).value;
            let cv = ConditionVector { timestamp: spec.t_enc + drift, ..cv0 };
            let fe = fuzzy_entropy(&cv, &spec.password, weights)?;
            Ok(SweepRow { drift, kms, fe })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyInputs {
    /// Password, score, timestamp and session secret all random.
    Random,
    /// Everything fixed except the salt.
    ConstantExceptSalt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    pub keys: usize,
    pub bytes: usize,
    pub bits_per_byte: f64,
    pub threshold: f64,
}

impl EntropyReport {
    pub fn pass(&self) -> bool {
        self.bits_per_byte >= self.threshold
    }
}

/// Derive `n` keys and measure the Shannon entropy of their pooled bytes.
pub fn entropy_report(
    n: usize,
    inputs: KeyInputs,
    kdf_iterations: u32,
    rng: &mut RandomSource,
) -> Result<EntropyReport, ReportError> {
    if n < MIN_ENTROPY_KEYS {
        return Err(ReportError::TooFewKeys(n));
    }
    let mut pool = Vec::with_capacity(n * 32);
    for _ in 0..n {
        let params = KdfParams::new(kdf_iterations, generate_salt(rng)?)?;
        let key = match inputs {
            KeyInputs::Random => {
                let password: [u8; 16] = rng.array()?;
                let [a, b]: [u8; 2] = rng.array()?;
                let fe = QuantizedScore::from_hundredths(u16::from_le_bytes([a, b]) % 101)?;
                let t = 1.0 + f64::from(u32::from_le_bytes(rng.array()?)) / 1000.0;
                let session: [u8; 32] = rng.array()?;
                derive_key(&password, fe, t, &session, &params)
            }
            KeyInputs::ConstantExceptSalt => {
                let fe = QuantizedScore::from_hundredths(73)?;
                derive_key(b"secretMessage", fe, 168_243.229, &[0u8; 32], &params)
            }
        };
        pool.extend_from_slice(key.as_bytes());
    }
    let bits_per_byte = shannon_entropy(&pool).expect("pool is non-empty");
    Ok(EntropyReport { keys: n, bytes: pool.len(), bits_per_byte, threshold: ENTROPY_THRESHOLD })
}

/// Mean fraction of key bits that change when one random bit of the
/// password or session secret is flipped.
pub fn avalanche(trials: usize, kdf_iterations: u32, rng: &mut RandomSource) -> Result<f64, ReportError> {
    if trials == 0 {
        return Ok(0.0);
    }
    let fe = QuantizedScore::from_hundredths(73)?;
    let mut total = 0.0;
    for i in 0..trials {
        let params = KdfParams::new(kdf_iterations, generate_salt(rng)?)?;
        let mut password: [u8; 16] = rng.array()?;
        let mut session: [u8; 32] = rng.array()?;
        let base = derive_key(&password, fe, 1000.0, &session, &params);
        let [pick, bit]: [u8; 2] = rng.array()?;
        if i % 2 == 0 {
            password[usize::from(pick) % password.len()] ^= 1 << (bit % 8);
        } else {
            session[usize::from(pick) % session.len()] ^= 1 << (bit % 8);
        }
        let flipped = derive_key(&password, fe, 1000.0, &session, &params);
        let diff: u32 = base.as_bytes().iter().zip(flipped.as_bytes()).map(|(a, b)| (a ^ b).count_ones()).sum();
        total += f64::from(diff) / 256.0;
    }
    Ok(total / trials as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub runs: usize,
    pub kdf_iterations: u32,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Time `runs` encrypt+decrypt round trips of a 1 KiB message under fixed
/// conditions.
pub fn bench(
    runs: usize,
    kdf_iterations: u32,
    backend: &dyn SealBackend,
    config: &KmsConfig,
    rng: &mut RandomSource,
) -> Result<BenchReport, ReportError> {
    if runs == 0 {
        return Err(ReportError::NoRuns);
    }
    let cv = ConditionVector::new(25.0, 65, 1_700_000_000.5)?;
    let opts = EncryptOptions { iterations: kdf_iterations, ..Default::default() };
    let message = vec![0x5a_u8; 1024];
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let env = encrypt(&message, b"benchmark-pass", &mut ConditionProvider::fixed(cv), backend, rng, &opts)?;
        let out = decrypt(&env, b"benchmark-pass", &mut ConditionProvider::fixed(cv), backend, config)?;
        times.push(start.elapsed().as_secs_f64() * 1000.0);
        debug_assert_eq!(&out[..], &message[..]);
    }
    times.sort_by(f64::total_cmp);
    let mid = runs / 2;
    let median_ms = if runs % 2 == 1 { times[mid] } else { (times[mid - 1] + times[mid]) / 2.0 };
    Ok(BenchReport {
        runs,
        kdf_iterations,
        mean_ms: times.iter().sum::<f64>() / runs as f64,
        median_ms,
        min_ms: times[0],
        max_ms: times[runs - 1],
    })
}
