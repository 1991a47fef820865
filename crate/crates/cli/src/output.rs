//! Output bookkeeping: every artifact is written atomically and recorded so
//! the run manifest can list it with a digest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ampforge::fsio;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub struct Outputs {
    command: &'static str,
    dir: PathBuf,
    written: Vec<PathBuf>,
    started: f64,
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    args: Vec<String>,
    version: &'a str,
    seed: u64,
    started_unix: f64,
    finished_unix: f64,
    outputs: Vec<FileEntry>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn sha256_hex(path: &Path) -> std::io::Result<(u64, String)> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok((bytes.len() as u64, digest.iter().map(|b| format!("{b:02x}")).collect()))
}

impl Outputs {
    pub fn new(command: &'static str, cfg: &RunConfig) -> Self {
        Self {
            command,
            dir: cfg.paths.output_dir.clone(),
            written: Vec::new(),
            started: now(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Marks a file written elsewhere (e.g. a checkpoint) as an output.
    pub fn record(&mut self, path: PathBuf) {
        self.written.push(path);
    }

    pub fn write_with<F>(&mut self, name: &str, f: F) -> anyhow::Result<PathBuf>
    where
        F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> ampforge::Result<()>,
    {
        let path = self.path(name);
        fsio::write_atomic(&path, f)?;
        self.record(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        fsio::write_json_pretty(&path, value)?;
        self.record(path.clone());
        Ok(path)
    }

    /// A checkpoint and its sidecar manifest.
    pub fn record_checkpoint(&mut self, path: &Path) {
        self.record(path.to_path_buf());
        self.record(fsio::manifest_path(path));
    }

    /// Writes the resolved configuration and the run manifest. Only the
    /// manifest carries timestamps.
    pub fn finish(mut self, cfg: &RunConfig) -> anyhow::Result<()> {
        let cfg_path = self.path(&format!("{}.config.json", self.command));
        fsio::write_json_pretty(&cfg_path, cfg)?;
        self.written.push(cfg_path);
        let mut outputs = Vec::with_capacity(self.written.len());
        for p in &self.written {
            let (bytes, sha256) = sha256_hex(p)?;
            outputs.push(FileEntry {
                path: p.display().to_string(),
                bytes,
                sha256,
            });
        }
        let manifest = RunManifest {
            command: self.command,
            args: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            started_unix: self.started,
            finished_unix: now(),
            outputs,
        };
        fsio::write_json_pretty(&self.path(&format!("{}.run_manifest.json", self.command)), &manifest)?;
        log::info!("{}: {} outputs in {}", self.command, self.written.len(), self.dir.display());
        Ok(())
    }
}
