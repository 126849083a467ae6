//! Aggregated run configuration, stable hashing, and the checkpoint format.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::evaluation::EvalOptions;
use crate::features::Normalizer;
use crate::market_data::GeneratorConfig;
use crate::mdp::EnvParams;
use crate::policy::PolicyParams;
use crate::training::TrainConfig;

/// Everything one pipeline run needs, mirrored by the structured config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub env: EnvParams,
    pub training: TrainConfig,
    pub evaluation: EvalOptions,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.env.exec.validate()?;
        self.env.midprice.validate()?;
        self.training.validate()?;
        if !(self.evaluation.min_order >= 0.0) {
            return Err(CoreError::config("evaluation.min_order", "must be >= 0"));
        }
        Ok(())
    }

    /// Stable content hash over the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex_prefix(&digest, 12)
    }
}

fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut out = String::with_capacity(chars);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
        if out.len() >= chars {
            break;
        }
    }
    out.truncate(chars);
    out
}

/// Version tag of the checkpoint schema.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized training artifact: policy, normalizer and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub params: PolicyParams,
    pub normalizer: Normalizer,
}

impl Checkpoint {
    pub fn new(
        config_hash: &str,
        seed: u64,
        params: PolicyParams,
        normalizer: Normalizer,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
            seed,
            feature_names: crate::features::REGISTRY
                .iter()
                .map(|(name, _)| name.to_string())
                .collect(),
            params,
            normalizer,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::Input(format!("checkpoint serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| CoreError::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| CoreError::Input(format!("checkpoint parse: {e}")))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(CoreError::Input(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}
