//! Oracle configuration file (JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endpoint::ModelEndpoint;
use crate::http::{HttpEndpoint, DEFAULT_TEMPERATURE};
use crate::scripted::{script_path_for, ScriptedEndpoint};

pub const DEFAULT_STEP_LIMIT: usize = 120;
pub const DEFAULT_SUB_AGENT_STEP_LIMIT: usize = 20;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("invalid oracle config: {0}")]
    Invalid(String),

    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),

    #[error("no script for finding {finding_id} under {path}")]
    NoScript { finding_id: String, path: PathBuf },

    #[error(transparent)]
    Script(#[from] difftriage_core::CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Base URL of an OpenAI-compatible API. Ignored when `script_path` is set.
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_step_limit")]
    pub step_limit: usize,
    #[serde(default = "default_sub_agent_step_limit")]
    pub sub_agent_step_limit: usize,
    #[serde(default)]
    pub input_price_per_1k: f64,
    #[serde(default)]
    pub output_price_per_1k: f64,
    /// REPORT verdicts below this confidence are downgraded to SKIP.
    #[serde(default)]
    pub min_confidence: f64,
    /// Offer the duplicate checker and record reported issues.
    #[serde(default = "default_true")]
    pub duplicate_check: bool,
    #[serde(default)]
    pub engines_path: Option<PathBuf>,
    #[serde(default)]
    pub spec_path: Option<PathBuf>,
    #[serde(default)]
    pub memory_path: Option<PathBuf>,
    /// Scripted fixture: a JSONL file or a directory of `<finding_id>.jsonl`.
    #[serde(default)]
    pub script_path: Option<PathBuf>,
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_step_limit() -> usize {
    DEFAULT_STEP_LIMIT
}

fn default_sub_agent_step_limit() -> usize {
    DEFAULT_SUB_AGENT_STEP_LIMIT
}

fn default_true() -> bool {
    true
}

impl Default for OracleConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl OracleConfig {
    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: OracleConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut config.engines_path,
            &mut config.spec_path,
            &mut config.memory_path,
            &mut config.script_path,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.step_limit == 0 || self.sub_agent_step_limit == 0 {
            return Err(ConfigError::Invalid("step limits must be positive".into()));
        }
        if self.sub_agent_step_limit > self.step_limit {
            return Err(ConfigError::Invalid("sub_agent_step_limit exceeds step_limit".into()));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(ConfigError::Invalid("min_confidence must lie in [0, 1]".into()));
        }
        if self.input_price_per_1k < 0.0 || self.output_price_per_1k < 0.0 {
            return Err(ConfigError::Invalid("prices must be non-negative".into()));
        }
        if self.script_path.is_none() && self.endpoint_url.is_none() {
            return Err(ConfigError::Invalid("set either script_path or endpoint_url".into()));
        }
        Ok(())
    }

    /// A fresh endpoint for one finding. Scripted fixtures restart from
    /// their first entry for every finding.
    pub fn endpoint_for(&self, finding_id: &str) -> Result<Box<dyn ModelEndpoint>, ConfigError> {
        if let Some(path) = &self.script_path {
            let file = script_path_for(path, finding_id).ok_or_else(|| ConfigError::NoScript {
                finding_id: finding_id.to_string(),
                path: path.clone(),
            })?;
            return Ok(Box::new(ScriptedEndpoint::from_file(&file)?));
        }
        let url = self
            .endpoint_url
            .as_deref()
            .ok_or_else(|| ConfigError::Invalid("set either script_path or endpoint_url".into()))?;
        let key = std::env::var(&self.api_key_env).map_err(|_| ConfigError::MissingApiKey(self.api_key_env.clone()))?;
        Ok(Box::new(
            HttpEndpoint::new(url, self.model.clone(), Some(key)).with_temperature(self.temperature),
        ))
    }

    pub fn cost(&self, input_tokens: u64, output_tokens: u64) -> f64 {
        input_tokens as f64 / 1000.0 * self.input_price_per_1k + output_tokens as f64 / 1000.0 * self.output_price_per_1k
    }
}
