//! Per-command run manifests and the output-directory lock.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::{other, CliError};

/// Exclusive `.lock` file in the output directory, removed on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| other(format!("{}: {e}", dir.display())))?;
        let path = dir.join(".lock");
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => other(format!(
                    "{} is locked by another run (remove {} if stale)",
                    dir.display(),
                    path.display()
                )),
                _ => other(format!("{}: {e}", path.display())),
            })?;
        Ok(Self { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub status: String,
    pub version: &'static str,
    pub config: &'a RunConfig,
    pub seeds: &'a BTreeMap<String, u64>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64), CliError> {
    let mut f = File::open(path).map_err(|e| other(format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(|e| other(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

/// State of one command invocation: the lock, emitted files and seeds.
#[derive(Debug)]
pub struct RunContext {
    pub cfg: RunConfig,
    pub command: &'static str,
    files: Vec<PathBuf>,
    seeds: BTreeMap<String, u64>,
    _lock: OutputLock,
}

impl RunContext {
    pub fn open(cfg: RunConfig, command: &'static str) -> Result<Self, CliError> {
        let lock = OutputLock::acquire(&cfg.output_dir)?;
        Ok(Self {
            cfg,
            command,
            files: Vec::new(),
            seeds: BTreeMap::new(),
            _lock: lock,
        })
    }

    pub fn out(&self) -> &Path {
        &self.cfg.output_dir
    }

    /// Registers an emitted file for the manifest.
    pub fn record(&mut self, path: impl Into<PathBuf>) {
        let p = path.into();
        if !self.files.contains(&p) {
            self.files.push(p);
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Writes `manifest_<command>.json` listing every recorded file.
    pub fn finish(self, status: &str) -> Result<PathBuf, CliError> {
        let out = self.cfg.output_dir.clone();
        let mut files = Vec::with_capacity(self.files.len());
        for p in &self.files {
            let (sha256, bytes) = sha256_file(p)?;
            let rel = p.strip_prefix(&out).unwrap_or(p);
            files.push(FileEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256,
                bytes,
            });
        }
        let manifest = Manifest {
            command: self.command,
            status: status.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            config: &self.cfg,
            seeds: &self.seeds,
            files,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(other)?;
        let path = out.join(format!("manifest_{}.json", self.command.replace('-', "_")));
        crate::io::write_text(&path, &(text + "\n"))?;
        Ok(path)
    }
}
