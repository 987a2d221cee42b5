//! Run manifests: what was run, with which parameters, and what it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved parameters, defaults included.
    pub parameters: BTreeMap<String, String>,
    pub seed: u64,
    pub tool_version: String,
    /// Arguments that reproduce the run (without the program name).
    pub argv: Vec<String>,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Manifest location for a primary output file: `<out>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

impl RunManifest {
    pub fn new(command: &str, parameters: BTreeMap<String, String>, seed: u64) -> Self {
        let mut argv = vec![command.to_string()];
        for (k, v) in &parameters {
            argv.push(format!("--{k}"));
            argv.push(v.clone());
        }
        RunManifest {
            command: command.to_string(),
            parameters,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            argv,
            outputs: Vec::new(),
        }
    }

    pub fn record(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.outputs.push(OutputFile { path: path.to_path_buf(), sha256 });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Outputs whose current content no longer matches the recorded hash.
    pub fn mismatches(&self) -> Result<Vec<PathBuf>> {
        let mut bad = Vec::new();
        for o in &self.outputs {
            if !o.path.exists() || sha256_file(&o.path)? != o.sha256 {
                bad.push(o.path.clone());
            }
        }
        Ok(bad)
    }

    pub fn verify(&self) -> Result<()> {
        let bad = self.mismatches()?;
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(format!("outputs differ from manifest: {bad:?}")))
        }
    }
}
