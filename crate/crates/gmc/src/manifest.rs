use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::{self, IoError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// What was run, on which inputs, with which settings.
///
/// Contains no timestamps or host details, so equal manifests mean equal runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub tool_version: String,
    pub seed: Option<u64>,
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let bytes = fs::read(path).map_err(|source| IoError::Fs { path: path.to_owned(), source })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            subcommand: subcommand.to_owned(),
            config,
            inputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            seed,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> io::Result<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputHash { path: path.display().to_string(), sha256 });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        io::write_json(path, self)
    }
}

/// `<file>.manifest.json` next to an output file, or `manifest.json` inside an output directory.
pub fn default_path(out: Option<&Path>, out_is_dir: bool) -> PathBuf {
    match out {
        Some(dir) if out_is_dir => dir.join("manifest.json"),
        Some(file) => {
            let mut name = file.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push(".manifest.json");
            file.with_file_name(name)
        }
        None => PathBuf::from("run_manifest.json"),
    }
}
