//! Training parameters both parties must agree on before a session starts.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::alignment::Salt;
use crate::model::{SplitArchitecture, SplitModelConfig};
use crate::nn::OptimizerConfig;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid session config: {0}")]
pub struct ConfigError(pub String);

fn default_batch_size() -> usize {
    32
}

/// Patient-level split of the aligned cohort, counted in patients taken in
/// cohort order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: usize,
    #[serde(default)]
    pub val: usize,
    #[serde(default)]
    pub test: usize,
    /// Sample ids of one patient share the prefix before this character.
    #[serde(default)]
    pub patient_delimiter: Option<char>,
}

/// The digested part of a job. Role and network endpoints are deliberately
/// absent: they differ between the two parties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default)]
    pub model: SplitModelConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: u32,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Epoch `e` shuffles training rows with seed `shuffle_seed + e`.
    pub shuffle_seed: u64,
    pub model_seed: u64,
    /// Seed of the cohort order produced by alignment.
    pub order_seed: u64,
    /// 32 hex digits shared out of band; salts the id digests.
    pub salt: String,
    pub split: SplitConfig,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        SplitArchitecture::new(&self.model).map_err(|e| ConfigError(e.to_string()))?;
        self.optimizer.validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.batch_size == 0 {
            return Err(ConfigError("batch_size must be positive".into()));
        }
        self.salt_bytes()?;
        Ok(())
    }

    pub fn salt_bytes(&self) -> Result<Salt, ConfigError> {
        let bytes = hex::decode(&self.salt).map_err(|e| ConfigError(format!("salt: {e}")))?;
        bytes
            .try_into()
            .map_err(|b: Vec<u8>| ConfigError(format!("salt must be 16 bytes, got {}", b.len())))
    }

    /// JSON with object keys sorted, no whitespace.
    pub fn canonical_json(&self) -> String {
        // serde_json's default map is ordered by key, so a round trip through
        // `Value` sorts every level
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// SHA-256 of [`SessionConfig::canonical_json`]; compared at handshake.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_json().as_bytes()).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> SessionConfig {
        SessionConfig {
            model: SplitModelConfig::default(),
            optimizer: OptimizerConfig::sgd(0.05, 0.9),
            epochs: 5,
            batch_size: 32,
            shuffle_seed: 7,
            model_seed: 1,
            order_seed: 3,
            salt: "00112233445566778899aabbccddeeff".into(),
            split: SplitConfig {
                train: 60,
                val: 30,
                test: 0,
                patient_delimiter: None,
            },
        }
    }

    #[test]
    fn digest_tracks_every_field() {
        let a = sample();
        assert_eq!(a.digest(), sample().digest());
        let mut b = sample();
        b.batch_size = 16;
        assert_ne!(a.digest(), b.digest());
        let mut c = sample();
        c.model.image_blocks = 3;
        assert_ne!(a.digest(), c.digest());
        assert!(a.canonical_json().starts_with("{\"batch_size\":32,\"epochs\":5,\"model\":{"));
    }

    #[test]
    fn salt_validation() {
        assert_eq!(sample().salt_bytes().unwrap()[15], 0xff);
        let mut s = sample();
        s.salt = "abcd".into();
        assert!(s.validate().is_err());
    }
}
