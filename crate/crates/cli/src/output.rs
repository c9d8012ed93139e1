//! Output locking, atomic artifact writes and run manifests.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use reid_core::persist::{sha256_hex, write_atomic};
use serde::Serialize;

pub const MANIFEST_VERSION: u32 = 1;
const LOCK_NAME: &str = ".scimgan.lock";

/// Held while a run writes into its output location; removed on drop.
pub struct Lock {
    path: PathBuf,
    _file: File,
}

impl Lock {
    pub fn acquire(path: PathBuf) -> Result<Self> {
        let file = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                anyhow::anyhow!("{} exists: another run is writing here (remove it if that run died)", path.display())
            } else {
                anyhow::anyhow!("cannot create lock {}: {e}", path.display())
            }
        })?;
        Ok(Self { path, _file: file })
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format_version: u32,
    tool_version: &'static str,
    command: &'a str,
    arguments: &'a serde_json::Value,
    config: &'a serde_json::Value,
    seed: Option<u64>,
    inputs: &'a [FileDigest],
    outputs: &'a [FileDigest],
}

/// Collects what a run read and wrote, then writes its manifest.
pub struct Run {
    command: &'static str,
    arguments: serde_json::Value,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    manifest: PathBuf,
    _lock: Lock,
}

impl Run {
    /// A run writing into directory `dir` (created if missing).
    pub fn in_dir(command: &'static str, arguments: serde_json::Value, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let lock = Lock::acquire(dir.join(LOCK_NAME))?;
        Ok(Self::new(command, arguments, dir.join("manifest.json"), lock))
    }

    /// A run producing the single file `out`; the manifest goes next to it.
    pub fn for_file(command: &'static str, arguments: serde_json::Value, out: &Path) -> Result<Self> {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            if !parent.is_dir() {
                bail!("output directory {} does not exist", parent.display());
            }
        }
        let lock = Lock::acquire(sibling(out, ".lock"))?;
        Ok(Self::new(command, arguments, sibling(out, ".manifest.json"), lock))
    }

    fn new(command: &'static str, arguments: serde_json::Value, manifest: PathBuf, lock: Lock) -> Self {
        Self {
            command,
            arguments,
            config: serde_json::Value::Null,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            manifest,
            _lock: lock,
        }
    }

    pub fn set_config(&mut self, config: serde_json::Value, seed: Option<u64>) {
        self.config = config;
        self.seed = seed;
    }

    /// Reads an input file and records its hash.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    /// Writes an output atomically and records its hash.
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.retain(|d| d.path != path.display().to_string());
        self.outputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let m = Manifest {
            format_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            arguments: &self.arguments,
            config: &self.config,
            seed: self.seed,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        write_atomic(&self.manifest, text.as_bytes()).with_context(|| format!("writing {}", self.manifest.display()))
    }
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}
