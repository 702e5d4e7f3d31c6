//! Run manifests: what a command read, what it wrote, and how.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cbns_core::nets::checkpoint::file_sha256;
use cbns_core::{write_atomic, Result};
use serde::Serialize;

pub const RUN_MANIFEST: &str = "run-manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    /// sha256 of every input file, keyed by path.
    pub input_hashes: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
    pub duration_secs: f64,
    pub version: &'static str,
}

/// Collects inputs and outputs while a command runs.
pub struct Recorder {
    command: String,
    started: Instant,
    inputs: Vec<PathBuf>,
    input_hashes: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: Instant::now(),
            inputs: Vec::new(),
            input_hashes: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// Hashes a file, or every regular file directly inside a directory
    /// (earlier run manifests and temp files excluded).
    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(path.to_path_buf());
        if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .filter(|p| {
                    let name = p.file_name().unwrap_or_default().to_string_lossy();
                    !name.starts_with('.') && name != RUN_MANIFEST
                })
                .collect();
            files.sort();
            for f in files {
                self.input_hashes.insert(f.display().to_string(), file_sha256(&f)?);
            }
        } else {
            self.input_hashes.insert(path.display().to_string(), file_sha256(path)?);
        }
        Ok(())
    }

    /// Hashes every file below `root`.
    pub fn input_tree(&mut self, root: &Path) -> Result<()> {
        self.inputs.push(root.to_path_buf());
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir)? {
                let path = entry?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.is_file() {
                    self.input_hashes.insert(path.display().to_string(), file_sha256(&path)?);
                }
            }
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes `dir/run-manifest.json`.
    pub fn finish(self, dir: &Path, config: serde_json::Value, seed: Option<u64>) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            config,
            seed,
            inputs: self.inputs,
            input_hashes: self.input_hashes,
            outputs: self.outputs,
            duration_secs: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION"),
        };
        let mut json = serde_json::to_string_pretty(&manifest)?;
        json.push('\n');
        write_atomic(&dir.join(RUN_MANIFEST), json.as_bytes())
    }
}

/// Pretty JSON with a trailing newline and a pointer to the run manifest.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("manifest".into(), RUN_MANIFEST.into());
    }
    let mut json = serde_json::to_string_pretty(&v)?;
    json.push('\n');
    write_atomic(path, json.as_bytes())
}
