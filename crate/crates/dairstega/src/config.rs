//! JSON run configuration for the CLI. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{AllocationError, AllocationKind, AllocationSpec};
use crate::batch::MatrixEntry;
use crate::codec::{CodecConfig, EosPolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config does not match the schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("invalid config value: {0}")]
    Invalid(String),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    /// path to a trained model file; also supplies the vocabulary when remote
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    /// remote endpoint (`http://host:port` or `host:port`); overridden by
    /// the DAIRSTEGA_REMOTE environment variable
    #[serde(default)]
    pub endpoint: Option<String>,
    /// provider identity pinned into the codec config; defaults to the model's
    /// own id for the built-in provider
    #[serde(default)]
    pub provider_id: Option<String>,
    /// how many entries a remote response must carry
    #[serde(default = "default_top_n")]
    pub top_n: usize,
}

fn default_top_n() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecSection {
    pub top_k: usize,
    pub kind: AllocationKind,
    pub alpha: u32,
    pub beta: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    pub max_tokens: usize,
    pub eos_policy: EosPolicy,
    pub instruction: String,
}

fn default_b() -> f64 {
    2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub matrix: Vec<MatrixEntry>,
    pub n_docs: usize,
    #[serde(default = "default_payload_bytes")]
    pub payload_bytes: usize,
    #[serde(default)]
    pub flc_bits: Vec<u32>,
    #[serde(default)]
    pub include_hc: bool,
}

fn default_payload_bytes() -> usize {
    16
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub provider: ProviderSection,
    pub codec: CodecSection,
    #[serde(default)]
    pub bench: Option<BenchSection>,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&raw)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.codec.top_k < 2 {
            return Err(ConfigError::Invalid("codec.top_k must be >= 2".into()));
        }
        if self.codec.max_tokens < 1 {
            return Err(ConfigError::Invalid("codec.max_tokens must be >= 1".into()));
        }
        if self.provider.model_path.is_none() && self.provider.endpoint.is_none() {
            return Err(ConfigError::Invalid(
                "provider needs model_path, endpoint, or both".into(),
            ));
        }
        // surfaces bad kind/alpha/beta combinations early
        AllocationSpec::new(self.codec.kind, self.codec.alpha, self.codec.beta, self.codec.b)?;
        Ok(())
    }

    /// The codec config bound to a concrete provider identity.
    pub fn codec_config(&self, provider_id: String) -> Result<CodecConfig, ConfigError> {
        Ok(CodecConfig {
            provider_id,
            top_k: self.codec.top_k,
            spec: AllocationSpec::new(
                self.codec.kind,
                self.codec.alpha,
                self.codec.beta,
                self.codec.b,
            )?,
            max_tokens: self.codec.max_tokens,
            eos_policy: self.codec.eos_policy,
            instruction: self.codec.instruction.clone(),
        })
    }
}
