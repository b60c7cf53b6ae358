//! Run manifests: what was run, on which bytes, producing which bytes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use riskseq_core::error::{Error, Result};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Versions {
    pub riskseq: String,
    pub checkpoint_format: u32,
    pub preprocessor_format: u32,
    pub baseline_format: u32,
    pub metrics_format: u32,
}

impl Versions {
    pub fn current() -> Self {
        Versions {
            riskseq: env!("CARGO_PKG_VERSION").to_string(),
            checkpoint_format: riskseq_core::model::CHECKPOINT_FORMAT_VERSION,
            preprocessor_format: riskseq_core::preprocess::PREPROCESSOR_FORMAT_VERSION,
            baseline_format: riskseq_core::baseline::BASELINE_FORMAT_VERSION,
            metrics_format: riskseq_core::evaluation::METRICS_FORMAT_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    /// Directory relative paths in `args` resolve against.
    pub working_dir: String,
    /// The effective configuration after defaults and overrides.
    pub config: Option<serde_json::Value>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub versions: Versions,
    pub threads: usize,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "{}: manifest format version {} is not supported",
                path.display(),
                m.format_version
            )));
        }
        Ok(m)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_json(value: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

fn is_manifest(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(MANIFEST_SUFFIX))
}

/// Files under `path` in sorted order, recursively, skipping manifests.
fn expand(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<Vec<_>>>()?;
        entries.sort();
        for e in entries {
            expand(&e, out)?;
        }
    } else if !is_manifest(path) {
        out.push(path.to_path_buf());
    }
    Ok(())
}

pub fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    let mut files = Vec::new();
    for p in paths {
        expand(p, &mut files)?;
    }
    files.sort();
    files.dedup();
    files
        .iter()
        .map(|f| Ok(FileDigest { path: f.display().to_string(), sha256: sha256_file(f)? }))
        .collect()
}

/// Collects what a command reads and writes, then writes its manifest.
#[derive(Debug)]
pub struct Recorder {
    command: String,
    args: Vec<String>,
    started: Instant,
    config: Option<serde_json::Value>,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, args: &[String]) -> Self {
        Recorder {
            command: command.to_string(),
            args: args.to_vec(),
            started: Instant::now(),
            config: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        self.config = Some(serde_json::to_value(config)?);
        Ok(())
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    /// Records an input file or every file of an input directory.
    pub fn input(&mut self, path: impl Into<PathBuf>) {
        self.inputs.push(path.into());
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Hashes inputs and outputs and writes `<dir>/<command>.manifest.json`.
    pub fn finish(self, dir: &Path) -> Result<PathBuf> {
        let working_dir = std::env::current_dir().map_err(|e| Error::io(".", e))?;
        let config_hash = self.config.as_ref().map(sha256_json);
        let manifest = RunManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            command: self.command.clone(),
            args: self.args,
            working_dir: working_dir.display().to_string(),
            config: self.config,
            config_hash,
            seed: self.seed,
            inputs: digests(&self.inputs)?,
            outputs: digests(&self.outputs)?,
            versions: Versions::current(),
            threads: rayon::current_num_threads(),
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = dir.join(format!("{}{MANIFEST_SUFFIX}", self.command));
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
