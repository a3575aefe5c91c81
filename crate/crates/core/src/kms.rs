//! Key Match Score inference and the weighted fuzzy entropy score.
//!
//! The KMS system has three inputs (`cpu_usage` on [0, 100],
//! `process_count` on [0, 500], `timestamp_drift` on [0, 10]) and one
//! output (`key_match_score` on [0, 1] with terms Low / Medium / High).
//! Decryption is admitted when the centroid of the aggregated output is at
//! least the threshold τ.

use thiserror::Error;

use crate::config::{ConfigError, FisConfig};
use crate::fuzzy::{MamdaniSystem, MembershipFunction};
use crate::probe::{drift, ConditionVector};

pub const CPU_VAR: &str = "cpu_usage";
pub const PROCESS_VAR: &str = "process_count";
pub const DRIFT_VAR: &str = "timestamp_drift";
pub const OUTPUT_VAR: &str = "key_match_score";

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// The shipped rule base and membership parameters.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../config/default_kms.toml");

#[derive(Debug, Error)]
pub enum KmsError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("entropy weights must be non-negative with a positive sum, got ({0}, {1}, {2})")]
    Weights(f64, f64, f64),
    #[error("password must not be empty")]
    EmptyPassword,
}

/// A validated KMS inference system plus its acceptance threshold.
#[derive(Debug, Clone)]
pub struct KmsConfig {
    system: MamdaniSystem,
    threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyMatchScore {
    pub value: f64,
    pub no_rule_fired: bool,
}

impl Default for KmsConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_CONFIG_TOML).expect("shipped KMS config is valid")
    }
}

impl KmsConfig {
    pub fn from_toml(text: &str) -> Result<Self, KmsError> {
        Self::from_fis(&FisConfig::from_toml(text)?)
    }

    pub fn from_fis(cfg: &FisConfig) -> Result<Self, KmsError> {
        let system = cfg.build()?;
        validate_shape(&system)?;
        Self::new(system, cfg.threshold.unwrap_or(DEFAULT_THRESHOLD))
    }

    pub fn new(system: MamdaniSystem, threshold: f64) -> Result<Self, KmsError> {
        validate_shape(&system)?;
        check_threshold(threshold)?;
        Ok(Self { system, threshold })
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self, KmsError> {
        check_threshold(threshold)?;
        self.threshold = threshold;
        Ok(self)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn system(&self) -> &MamdaniSystem {
        &self.system
    }

    pub fn to_fis(&self) -> FisConfig {
        FisConfig::from_system(&self.system, Some(self.threshold))
    }

    /// KMS for raw inputs; out-of-domain values are clamped.
    pub fn score(&self, cpu_percent: f64, process_count: f64, drift_secs: f64) -> KeyMatchScore {
        let agg = self
            .system
            .infer(&[(CPU_VAR, cpu_percent), (PROCESS_VAR, process_count), (DRIFT_VAR, drift_secs)])
            .expect("inputs validated at construction");
        let c = agg.centroid();
        KeyMatchScore { value: c.value, no_rule_fired: c.no_rule_fired }
    }

    /// KMS of the current conditions against the encryption timestamp.
    pub fn compute_kms(&self, current: &ConditionVector, t_enc: f64) -> KeyMatchScore {
        self.score(current.cpu_percent, f64::from(current.process_count), drift(t_enc, current.timestamp))
    }

    /// An empty aggregate is indeterminate and never admits.
    pub fn admits(&self, kms: &KeyMatchScore) -> bool {
        !kms.no_rule_fired && kms.value >= self.threshold
    }
}

fn check_threshold(t: f64) -> Result<(), KmsError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(KmsError::Threshold(t))
    }
}

fn invalid(msg: String) -> KmsError {
    KmsError::Config(ConfigError::Invalid(msg))
}

fn validate_shape(system: &MamdaniSystem) -> Result<(), KmsError> {
    for (name, domain) in [(CPU_VAR, (0.0, 100.0)), (PROCESS_VAR, (0.0, 500.0)), (DRIFT_VAR, (0.0, 10.0))] {
        let var = system.input(name).ok_or_else(|| invalid(format!("missing input variable `{name}`")))?;
        if var.domain() != domain {
            return Err(invalid(format!("`{name}` domain must be {domain:?}, got {:?}", var.domain())));
        }
    }
    if system.inputs().len() != 3 {
        return Err(invalid("the KMS system takes exactly three inputs".into()));
    }
    let out = system.output();
    if out.name() != OUTPUT_VAR || out.domain() != (0.0, 1.0) {
        return Err(invalid(format!("output must be `{OUTPUT_VAR}` on [0, 1]")));
    }
    // Plateaus must sit inside their bands; ramps may overlap neighbours.
    for (term, lo, hi) in [("Low", 0.0, 0.4), ("Medium", 0.4, 0.7), ("High", 0.7, 1.0)] {
        let t = out.term(term).ok_or_else(|| invalid(format!("output term `{term}` missing")))?;
        let [_, b, c, _] = t.membership.params();
        if b < lo || c > hi {
            return Err(invalid(format!("output term `{term}` plateau [{b}, {c}] leaves band [{lo}, {hi}]")));
        }
    }
    Ok(())
}

/// Non-negative weights of the condition, password and timestamp memberships.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyWeights {
    condition: f64,
    password: f64,
    timestamp: f64,
}

impl EntropyWeights {
    pub fn new(condition: f64, password: f64, timestamp: f64) -> Result<Self, KmsError> {
        let ws = [condition, password, timestamp];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) || ws.iter().sum::<f64>() <= 0.0 {
            return Err(KmsError::Weights(condition, password, timestamp));
        }
        Ok(Self { condition, password, timestamp })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.condition, self.password, self.timestamp]
    }
}

impl Default for EntropyWeights {
    fn default() -> Self {
        Self { condition: 0.4, password: 0.3, timestamp: 0.3 }
    }
}

/// `F_e = (w1·μφ + w2·μP + w3·μT) / (w1 + w2 + w3)`.
pub fn entropy_score(mu_condition: f64, mu_password: f64, mu_timestamp: f64, w: &EntropyWeights) -> f64 {
    let num = w.condition * mu_condition + w.password * mu_password + w.timestamp * mu_timestamp;
    num / (w.condition + w.password + w.timestamp)
}

const ENTROPY_HIGH: [f64; 4] = [6.0, 8.0, 10.0, 10.0];
const FRESHNESS_MEDIUM: [f64; 4] = [3.0, 5.0, 6.0, 7.0];

fn trapezoid(p: [f64; 4]) -> MembershipFunction {
    MembershipFunction::trapezoid(p[0], p[1], p[2], p[3]).expect("constant parameters are ordered")
}

/// μφ: degree of the High entropy set `[6, 8, 10, 10]` at an activity level on [0, 10].
pub fn condition_membership(level: f64) -> f64 {
    trapezoid(ENTROPY_HIGH).eval(level.clamp(0.0, 10.0))
}

/// μP: a deterministic password strength score in [0, 1].
///
/// `min(1, classes/4 · min(1, len/16) + H/8 · 0.5)` where `classes` counts
/// which of {lower, upper, digit, other} occur and `H` is the per-byte
/// Shannon entropy of the password.
pub fn password_membership(password: &[u8]) -> Result<f64, KmsError> {
    if password.is_empty() {
        return Err(KmsError::EmptyPassword);
    }
    let mut classes = [false; 4];
    for &b in password {
        let idx = if b.is_ascii_lowercase() {
            0
        } else if b.is_ascii_uppercase() {
            1
        } else if b.is_ascii_digit() {
            2
        } else {
            3
        };
        classes[idx] = true;
    }
    let diversity = classes.iter().filter(|&&c| c).count() as f64 / 4.0;
    let length = (password.len() as f64 / 16.0).min(1.0);
    let h = crate::entropy::shannon_entropy(password).expect("non-empty");
    Ok((diversity * length + h / 8.0 * 0.5).min(1.0))
}

/// μT: the Medium set `[3, 5, 6, 7]` evaluated at ten times the
/// sub-second fraction of `timestamp`.
pub fn timestamp_membership(timestamp: f64) -> f64 {
    let frac = timestamp - timestamp.floor();
    trapezoid(FRESHNESS_MEDIUM).eval(10.0 * frac)
}

/// F_e for a sampled condition vector and password, with μφ taken at
/// `cpu_percent / 10`.
pub fn fuzzy_entropy(cv: &ConditionVector, password: &[u8], w: &EntropyWeights) -> Result<f64, KmsError> {
    let mu_phi = condition_membership(cv.cpu_percent / 10.0);
    let mu_p = password_membership(password)?;
    let mu_t = timestamp_membership(cv.timestamp);
    Ok(entropy_score(mu_phi, mu_p, mu_t, w))
}
