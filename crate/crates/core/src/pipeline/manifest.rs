use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::matrix_io::sha256_file;

/// What a stage consumed and produced. No timestamps, so two identical runs
/// write identical manifests (up to the echoed output directory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    /// Input path -> sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output path (relative to the run directory) -> sha256.
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(stage: &str, config: &RunConfig) -> Self {
        Self {
            stage: stage.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            notes: BTreeMap::new(),
        }
    }

    pub fn seed(&mut self, label: &str, value: u64) {
        self.seeds.insert(label.to_string(), value);
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.insert(key.to_string(), value.to_string());
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Hashes every file under `path` (recursively when it is a directory).
    pub fn output(&mut self, root: &Path, path: &Path) -> Result<()> {
        for f in files_under(path)? {
            let rel = f.strip_prefix(root).unwrap_or(&f);
            let key = rel.to_string_lossy().replace('\\', "/");
            self.outputs.insert(key, sha256_file(&f)?);
        }
        Ok(())
    }

    pub fn write(&self, run_dir: &Path) -> Result<PathBuf> {
        let dir = run_dir.join("manifests");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{}.json", self.stage));
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn files_under(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        out.extend(files_under(&p)?);
    }
    Ok(out)
}
