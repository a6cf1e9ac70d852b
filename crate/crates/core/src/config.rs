//! Run configuration: retrieval weights and cut-offs, the clustering
//! threshold, episode limits and model budgets. Every episode log embeds
//! the resolved value.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::DEFAULT_THETA_C;
use crate::embedding::DEFAULT_DIMENSION;
use crate::skillbook::RetrievalParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    /// Teacher interruptions allowed per episode; afterwards the episode
    /// continues without consulting the teacher.
    pub max_feedback_per_attempt: u32,
    /// Program attempts per subtask.
    pub max_attempts: u32,
    /// Repair rounds after a program fails to parse or validate.
    pub repair_rounds: u32,
    /// Decomposition retries after an invalid subtask list.
    pub decompose_retries: u32,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_feedback_per_attempt: 5, max_attempts: 6, repair_rounds: 2, decompose_retries: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    pub decompose: usize,
    pub generate: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets { decompose: 2000, generate: 4000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub embedding_dimension: usize,
    pub retrieval: RetrievalParams,
    /// Cluster membership threshold.
    pub theta_c: f64,
    pub limits: Limits,
    pub budgets: Budgets,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            embedding_dimension: DEFAULT_DIMENSION,
            retrieval: RetrievalParams::default(),
            theta_c: DEFAULT_THETA_C,
            limits: Limits::default(),
            budgets: Budgets::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Config = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.retrieval.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.embedding_dimension == 0 {
            return Err(ConfigError::Invalid("embedding_dimension must be positive".into()));
        }
        if self.theta_c.is_nan() {
            return Err(ConfigError::Invalid("theta_c is NaN".into()));
        }
        if self.limits.max_attempts == 0 {
            return Err(ConfigError::Invalid("max_attempts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = Config::from_toml("theta_c = 0.6\n[retrieval]\nk = 2\n").unwrap();
        assert_eq!(c.theta_c, 0.6);
        assert_eq!(c.retrieval.k, 2);
        assert_eq!(c.retrieval.theta_min, RetrievalParams::default().theta_min);
        assert_eq!(c.limits, Limits::default());
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(Config::from_toml("[retrieval]\nlambda_act = 0.0\n").is_err());
    }
}
