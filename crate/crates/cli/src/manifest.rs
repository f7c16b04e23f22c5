use emov2v_core::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub started: String,
    pub finished: String,
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn start(command: &str, config_path: Option<&Path>, config_hash: String, seed: Option<u64>, output_dir: &Path) -> Self {
        Self {
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            config_hash,
            seed,
            output_dir: output_dir.to_path_buf(),
            started: now(),
            finished: String::new(),
            artifacts: Vec::new(),
        }
    }

    /// Stamp the finish time and write `manifest.json`; every artifact must exist.
    pub fn finish(mut self, artifacts: Vec<PathBuf>) -> Result<PathBuf> {
        if let Some(p) = artifacts.iter().find(|p| !p.exists()) {
            return Err(Error::invalid(format!("artifact {} was not written", p.display())));
        }
        self.artifacts = artifacts.iter().map(std::fs::canonicalize).collect::<std::io::Result<_>>()?;
        self.output_dir = std::fs::canonicalize(&self.output_dir)?;
        self.finished = now();
        let path = self.output_dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&self)?)?;
        Ok(path)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}
