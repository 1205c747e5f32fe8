use std::collections::BTreeMap;
use std::path::Path;

use fuselocate::experiment::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::formats::{json_bytes, sha256_hex};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub wall_clock_s: f64,
    /// Path relative to the output root, mapped to its SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub config_hash: String,
    pub toolkit_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn config_bytes(cfg: &ExperimentConfig) -> Vec<u8> {
    json_bytes(cfg)
}

impl Manifest {
    fn fresh(config_hash: String) -> Self {
        Self {
            run_id: config_hash[..12].to_string(),
            config_hash,
            toolkit_version: TOOLKIT_VERSION.to_string(),
            stages: BTreeMap::new(),
        }
    }

    /// The manifest on disk when it belongs to the same resolved config;
    /// otherwise an empty one.
    pub fn load_or_new(path: &Path, cfg: &ExperimentConfig) -> Self {
        let hash = sha256_hex(&config_bytes(cfg));
        std::fs::read(path)
            .ok()
            .and_then(|b| serde_json::from_slice::<Manifest>(&b).ok())
            .filter(|m| m.config_hash == hash && m.toolkit_version == TOOLKIT_VERSION)
            .unwrap_or_else(|| Self::fresh(hash))
    }

    pub fn record(&mut self, stage: &str, wall_clock_s: f64, artifacts: Vec<(String, String)>) {
        self.stages.insert(
            stage.to_string(),
            StageRecord {
                wall_clock_s,
                artifacts: artifacts.into_iter().collect(),
            },
        );
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, json_bytes(self)).map_err(|e| CliError::io("write", path, e))
    }

    /// Artifacts whose file is missing or whose content no longer matches.
    pub fn stale_artifacts(&self, root: &Path) -> Vec<String> {
        self.stages
            .values()
            .flat_map(|s| &s.artifacts)
            .filter(|(rel, hash)| {
                std::fs::read(root.join(rel)).map_or(true, |b| &sha256_hex(&b) != *hash)
            })
            .map(|(rel, _)| rel.clone())
            .collect()
    }
}
