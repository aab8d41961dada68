//! Provenance sidecar for every run.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::Result;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    /// Content hash of the training windows.
    pub dataset_fingerprint: String,
    pub code_version: String,
    pub seed: u64,
    pub started: DateTime<Utc>,
    pub finished: Option<DateTime<Utc>>,
    /// Free-form facts: early-stop epoch, contamination count, ...
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, dataset_fingerprint: impl Into<String>) -> Self {
        Self {
            seed: config.train.seed,
            config: config.clone(),
            dataset_fingerprint: dataset_fingerprint.into(),
            code_version: CODE_VERSION.to_string(),
            started: Utc::now(),
            finished: None,
            notes: BTreeMap::new(),
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.insert(key.to_string(), value.to_string());
    }

    pub fn finish(&mut self) {
        self.finished = Some(Utc::now());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// SHA-256 of the serialized manifest, first 16 hex digits.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("manifest serializes"));
        hex::encode(digest)[..16].to_string()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    #[test]
    fn json_round_trip() {
        let mut m = RunManifest::new(&ExperimentConfig::for_profile(Profile::Aiops), "abc");
        m.note("contaminated", 12);
        m.finish();
        let back = RunManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash(), m.hash());
    }
}
