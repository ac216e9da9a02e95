use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

/// Record of one command invocation. Every artifact written is listed;
/// `config` holds the resolved configuration and can be fed back through
/// `--config manifest.json` to repeat the run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub artifacts: Vec<PathBuf>,
    pub version: String,
    pub duration_secs: f64,
}

pub struct Recorder {
    out: PathBuf,
    started: Instant,
    artifacts: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            out: out.to_path_buf(),
            started: Instant::now(),
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes `bytes` to `name` inside the output directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.artifacts.push(p);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish<C: Serialize>(mut self, command: &str, config: &C, seed: u64) -> Result<PathBuf> {
        let manifest_path = self.path("manifest.json");
        self.artifacts.push(manifest_path.clone());
        let manifest = RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            artifacts: self.artifacts,
            version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        std::fs::write(&manifest_path, text)
            .with_context(|| format!("writing {}", manifest_path.display()))?;
        Ok(manifest_path)
    }
}
