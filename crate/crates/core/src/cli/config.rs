use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::EnvTrainConfig;
use crate::evalx::DEFAULT_ALPHAS;
use crate::qlearn::LearnConfig;
use crate::types::{RewardForm, RewardParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortConfig {
    pub n: usize,
    pub seed: u64,
    /// Ground-truth coefficients as JSON; the built-in model when absent.
    pub coefficients: Option<PathBuf>,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n: 81_000,
            seed: 2020,
            coefficients: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub form: RewardForm,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.04,
            gamma: 0.99,
            form: RewardForm::Multiplicative,
        }
    }
}

impl RewardConfig {
    pub fn params(&self) -> RewardParams {
        RewardParams {
            alpha: self.alpha,
            gamma: self.gamma,
            form: self.form,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub replicates: usize,
    /// Replicate seeds; consecutive from the learning seed when absent.
    pub seeds: Option<Vec<u64>>,
    /// Seed for the single evaluation of each baseline policy.
    pub baseline_seed: u64,
    pub alphas: Vec<f64>,
    /// Simulated patients for environment validation; the cohort size
    /// when absent.
    pub validation_patients: Option<usize>,
    pub validation_seed: u64,
    /// Deep Q settings by label, such as `64-3`.
    pub deep: String,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            replicates: 20,
            seeds: None,
            baseline_seed: 7,
            alphas: DEFAULT_ALPHAS.to_vec(),
            validation_patients: None,
            validation_seed: 11,
            deep: "64-3".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub workdir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            workdir: PathBuf::from("work"),
        }
    }
}

/// Everything a pipeline run depends on. All randomness flows from the
/// seeds named here.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub cohort: CohortConfig,
    pub env: EnvTrainConfig,
    pub qlearn: LearnConfig,
    pub reward: RewardConfig,
    pub evaluation: EvaluationConfig,
    pub paths: PathsConfig,
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |r: Result<()>| r.map_err(|e| Error::Config(e.to_string()));
        if self.cohort.n == 0 {
            return config_err("cohort.n must be at least 1");
        }
        wrap(self.env.validate())?;
        wrap(self.qlearn.validate())?;
        wrap(self.reward.params().validate())?;
        if self.qlearn.gamma != self.reward.gamma {
            return config_err(format!(
                "qlearn.gamma {} differs from reward.gamma {}",
                self.qlearn.gamma, self.reward.gamma
            ));
        }
        let ev = &self.evaluation;
        if ev.replicates == 0 {
            return config_err("evaluation.replicates must be at least 1");
        }
        if let Some(s) = &ev.seeds {
            if s.len() != ev.replicates {
                return config_err(format!("{} seeds listed for {} replicates", s.len(), ev.replicates));
            }
        }
        if ev.alphas.is_empty() || ev.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return config_err(format!("evaluation.alphas must be non-empty and non-negative, got {:?}", ev.alphas));
        }
        if ev.validation_patients == Some(0) {
            return config_err("evaluation.validation_patients must be at least 1");
        }
        Ok(())
    }

    pub fn replicate_seeds(&self) -> Vec<u64> {
        self.evaluation
            .seeds
            .clone()
            .unwrap_or_else(|| (0..self.evaluation.replicates as u64).map(|i| self.qlearn.seed + i).collect())
    }

    /// Hash of everything but the work directory, so identical runs in
    /// different places share it.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        hex::encode(Sha256::digest(c.to_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_rejections() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!((c.qlearn.epochs, c.evaluation.replicates, c.env.dropout), (30, 20, 0.2));
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
        assert!(RunConfig::from_json(r#"{"cohort": {"size": 3}}"#).is_err());
        let mut bad = c.clone();
        bad.cohort.n = 0;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut gap = c.clone();
        gap.reward.gamma = 0.9;
        assert!(gap.validate().is_err());
        let mut moved = c.clone();
        moved.paths.workdir = "elsewhere".into();
        assert_eq!(moved.hash(), c.hash());
        assert_eq!(c.replicate_seeds(), (0..20).collect::<Vec<u64>>());
    }
}
