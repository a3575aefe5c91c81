//! Human-editable TOML description of a Mamdani system.
//!
//! ```toml
//! threshold = 0.5          # optional, used by the KMS gate
//! resolution = 1001        # optional, output grid size
//! rules = ["cpu_usage is Low => key_match_score is High"]
//!
//! [[inputs]]
//! name = "cpu_usage"
//! domain = [0.0, 100.0]
//! terms = [{ name = "Low", trapezoid = [0.0, 0.0, 20.0, 40.0] }]
//!
//! [output]
//! name = "key_match_score"
//! domain = [0.0, 1.0]
//! terms = [{ name = "High", triangle = [0.5, 1.0, 1.0] }]
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzzy::{FuzzyError, FuzzyVariable, MamdaniSystem, MembershipFunction, Rule, RuleBase, DEFAULT_RESOLUTION};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("term `{0}` must give exactly one of `trapezoid` or `triangle`")]
    TermShape(String),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trapezoid: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triangle: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableConfig {
    pub name: String,
    pub domain: [f64; 2],
    pub terms: Vec<TermConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    pub rules: Vec<String>,
    pub inputs: Vec<VariableConfig>,
    pub output: VariableConfig,
}

impl TermConfig {
    fn membership(&self) -> Result<MembershipFunction, ConfigError> {
        match (self.trapezoid, self.triangle) {
            (Some([a, b, c, d]), None) => Ok(MembershipFunction::trapezoid(a, b, c, d)?),
            (None, Some([a, p, c])) => Ok(MembershipFunction::triangle(a, p, c)?),
            _ => Err(ConfigError::TermShape(self.name.clone())),
        }
    }
}

impl VariableConfig {
    pub fn build(&self) -> Result<FuzzyVariable, ConfigError> {
        let terms = self
            .terms
            .iter()
            .map(|t| Ok((t.name.clone(), t.membership()?)))
            .collect::<Result<Vec<_>, ConfigError>>()?;
        Ok(FuzzyVariable::new(self.name.clone(), (self.domain[0], self.domain[1]), terms)?)
    }

    pub fn from_variable(var: &FuzzyVariable) -> Self {
        let (lo, hi) = var.domain();
        let terms = var
            .terms()
            .iter()
            .map(|t| {
                let [a, b, c, d] = t.membership.params();
                if t.membership.is_triangle() {
                    TermConfig { name: t.name.clone(), trapezoid: None, triangle: Some([a, b, d]) }
                } else {
                    TermConfig { name: t.name.clone(), trapezoid: Some([a, b, c, d]), triangle: None }
                }
            })
            .collect();
        Self { name: var.name().to_string(), domain: [lo, hi], terms }
    }
}

impl FisConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn build(&self) -> Result<MamdaniSystem, ConfigError> {
        let inputs = self.inputs.iter().map(VariableConfig::build).collect::<Result<Vec<_>, _>>()?;
        let output = self.output.build()?;
        let rules = self.rules.iter().map(|r| r.parse::<Rule>()).collect::<Result<Vec<_>, _>>()?;
        let rule_base = RuleBase::new(output, rules)?;
        Ok(MamdaniSystem::new(inputs, rule_base, self.resolution.unwrap_or(DEFAULT_RESOLUTION))?)
    }

    pub fn from_system(system: &MamdaniSystem, threshold: Option<f64>) -> Self {
        Self {
            threshold,
            resolution: Some(system.resolution()),
            rules: system.rule_base().rules().iter().map(ToString::to_string).collect(),
            inputs: system.inputs().iter().map(VariableConfig::from_variable).collect(),
            output: VariableConfig::from_variable(system.output()),
        }
    }
}
