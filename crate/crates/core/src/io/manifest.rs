use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::config::RunConfig;

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

/// Provenance of one command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub ensemble_size: usize,
    /// Hash over the effective configuration and the bytes of every input.
    pub run_hash: String,
    pub config: String,
    pub inputs: BTreeMap<String, InputRecord>,
    /// Hash of every other file written by the command.
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub lcurve_low_confidence: Option<bool>,
    #[serde(default)]
    pub negative_entries: Option<usize>,
    #[serde(default)]
    pub innovations: Vec<f64>,
}

/// Reads every input named by `cfg` and hashes it together with the
/// canonical config text.
pub fn hash_run(cfg: &RunConfig) -> Result<(String, BTreeMap<String, InputRecord>)> {
    let named = [
        ("population", &cfg.inputs.population),
        ("births", &cfg.inputs.births),
        ("immigration", &cfg.inputs.immigration),
        ("all_cause_deaths", &cfg.inputs.all_cause_deaths),
        ("disease_deaths", &cfg.inputs.disease_deaths),
    ];
    let config = cfg.to_toml();
    let mut h = Sha256::new();
    h.update(b"config\0");
    h.update(config.as_bytes());
    let mut inputs = BTreeMap::new();
    for (name, path) in named {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let digest = sha256_hex(&bytes);
        h.update(name.as_bytes());
        h.update(b"\0");
        h.update(digest.as_bytes());
        inputs.insert(
            name.to_string(),
            InputRecord {
                path: path.display().to_string(),
                sha256: digest,
            },
        );
    }
    Ok((hex::encode(h.finalize()), inputs))
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Result<Self> {
        let (run_hash, inputs) = hash_run(cfg)?;
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            ensemble_size: cfg.ensemble.size,
            run_hash,
            config: cfg.to_toml(),
            inputs,
            outputs: BTreeMap::new(),
            beta: None,
            lcurve_low_confidence: None,
            negative_entries: None,
            innovations: Vec::new(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Csv {
            path,
            row: e.line(),
            message: e.to_string(),
        })
    }
}
