//! The JSON record written next to every run's result files.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use byzfed::pipeline::ExperimentConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    /// Hex SHA-256 of the file contents; absent until the file is written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub build_id: String,
    pub command: String,
    pub run_id: String,
    pub seed: u64,
    /// Edge threshold actually used for ingestion, when it was derived.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingest_gamma: Option<f64>,
    pub threads: usize,
    pub started_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_unix: Option<u64>,
    pub status: RunStatus,
    pub files: Vec<OutputFile>,
    pub config: ExperimentConfig,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable identifier of a config: the first 12 hex digits of the SHA-256 of
/// its JSON form. Equal configs give equal ids, so reruns write identical
/// result files.
pub fn run_id(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("experiment configs always serialize");
    sha256_hex(&json)[..12].to_string()
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, threads: usize, files: &[&str]) -> Self {
        RunManifest {
            schema_version: byzfed::report::SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            build_id: env!("BYZFED_BUILD_ID").to_string(),
            command: command.to_string(),
            run_id: run_id(cfg),
            seed: cfg.seed,
            ingest_gamma: None,
            threads,
            started_unix: unix_now(),
            finished_unix: None,
            status: RunStatus::Running,
            files: files
                .iter()
                .map(|f| OutputFile {
                    name: f.to_string(),
                    sha256: None,
                })
                .collect(),
            config: cfg.clone(),
        }
    }

    pub fn read(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Writes the manifest into `dir` without ever leaving a partial file.
    pub fn write(&self, dir: &Path) -> byzfed::Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        byzfed::report::write_atomic(&path, &bytes)?;
        Ok(path)
    }

    /// Fills in the hash of every listed file found in `dir`.
    pub fn record_hashes(&mut self, dir: &Path) -> std::io::Result<()> {
        for f in &mut self.files {
            let bytes = std::fs::read(dir.join(&f.name))?;
            f.sha256 = Some(sha256_hex(&bytes));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_synthetic;

    #[test]
    fn embedded_config_round_trips() {
        let cfg = default_synthetic();
        let m = RunManifest::new("synth", &cfg, 1, &["results.csv"]);
        let json = serde_json::to_string(&m).unwrap();
        let back: RunManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(back, m);
    }

    #[test]
    fn run_id_tracks_the_config() {
        let a = default_synthetic();
        let mut b = a.clone();
        assert_eq!(run_id(&a), run_id(&b));
        b.seed += 1;
        assert_ne!(run_id(&a), run_id(&b));
        assert_eq!(run_id(&a).len(), 12);
    }

    #[test]
    fn sha256_of_known_input() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
