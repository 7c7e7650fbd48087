//! Run manifest: content hashes of every stage's inputs and outputs, so
//! reported numbers are traceable to exact files and interrupted pipelines
//! resume from the last completed stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// input name → sha256 (config hash included under "config").
    pub inputs: BTreeMap<String, String>,
    /// output path → sha256 at completion time.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub version: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub config_hash: String,
    #[serde(default)]
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot hash missing file {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    pub fn load_or_default(path: &Path) -> Self {
        match std::fs::read_to_string(path) {
            Ok(raw) => serde_json::from_str(&raw).unwrap_or_else(|e| {
                log::warn!("manifest {} unreadable ({e}); starting fresh", path.display());
                Manifest::default()
            }),
            Err(_) => Manifest::default(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        silvermine::corpus::write_atomic(path, &bytes)
            .with_context(|| format!("writing manifest {}", path.display()))
    }

    /// True when the stage completed earlier with identical inputs and its
    /// recorded outputs still exist unchanged on disk.
    pub fn stage_up_to_date(&self, stage: &str, inputs: &BTreeMap<String, String>) -> bool {
        let Some(record) = self.stages.get(stage) else {
            return false;
        };
        if &record.inputs != inputs {
            return false;
        }
        record.outputs.iter().all(|(path, expected)| {
            hash_file(&PathBuf::from(path))
                .map(|actual| &actual == expected)
                .unwrap_or(false)
        })
    }

    pub fn record_stage(
        &mut self,
        stage: &str,
        inputs: BTreeMap<String, String>,
        output_paths: &[&Path],
    ) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for path in output_paths {
            outputs.insert(path.display().to_string(), hash_file(path)?);
        }
        self.stages
            .insert(stage.to_string(), StageRecord { inputs, outputs });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_tracking_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        let output = dir.path().join("out.txt");
        std::fs::write(&input, "input").unwrap();
        std::fs::write(&output, "output").unwrap();

        let mut inputs = BTreeMap::new();
        inputs.insert("in".to_string(), hash_file(&input).unwrap());

        let mut manifest = Manifest::default();
        assert!(!manifest.stage_up_to_date("index", &inputs));
        manifest.record_stage("index", inputs.clone(), &[&output]).unwrap();
        assert!(manifest.stage_up_to_date("index", &inputs));

        // output drift invalidates the stage
        std::fs::write(&output, "changed").unwrap();
        assert!(!manifest.stage_up_to_date("index", &inputs));

        // input drift too
        std::fs::write(&output, "output").unwrap();
        let mut other = inputs.clone();
        other.insert("in".to_string(), "deadbeef".to_string());
        assert!(!manifest.stage_up_to_date("index", &other));

        let path = dir.path().join("manifest.json");
        manifest.save(&path).unwrap();
        assert_eq!(Manifest::load_or_default(&path), manifest);
    }
}
