//! Output directory handling and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use stwg::Result;

/// Collects the files a command writes and emits the manifest last.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    config: &'a serde_json::Value,
    outputs: &'a [String],
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, contents)?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// `manifest.json` with the seed, the effective configuration and its
    /// SHA-256, the crate version and the files written. No timestamps, so
    /// reruns are byte-identical.
    pub fn finish(mut self, command: &str, seed: u64, config: &serde_json::Value) -> Result<()> {
        self.written.sort();
        let canonical = serde_json::to_string(config)?;
        let digest = Sha256::digest(canonical.as_bytes());
        let config_sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config_sha256,
            config,
            outputs: &self.written,
        };
        fs::write(self.path("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}
