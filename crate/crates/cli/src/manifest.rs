//! Run manifests: config echo plus content hashes of inputs and outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ckgr_core::{Error, Result};
use sha1::{Digest, Sha1};

use crate::config::RunConfig;

/// Hash of `bytes` as git stores a blob: SHA-1 over `"blob <len>\0" + bytes`.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().fold(String::with_capacity(40), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileRecord {
    pub name: String,
    pub path: PathBuf,
    pub hash: String,
}

impl FileRecord {
    pub fn of(name: &str, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(FileRecord {
            name: name.to_string(),
            path: path.to_path_buf(),
            hash: git_blob_hash(&bytes),
        })
    }
}

/// Manifest text. Config lines come first so the file can be passed back
/// with `--config`; `run.*`, `input.*` and `output.*` keys are ignored on
/// load.
pub fn render(command: &str, cfg: &RunConfig, inputs: &[FileRecord], outputs: &[FileRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "run.command = {command}");
    let _ = writeln!(out, "run.version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "run.seed = {}", cfg.hyper.seed);
    for f in inputs {
        let _ = writeln!(out, "input.{}.path = {}", f.name, f.path.display());
        let _ = writeln!(out, "input.{}.sha1 = {}", f.name, f.hash);
    }
    for f in outputs {
        let _ = writeln!(out, "output.{}.path = {}", f.name, f.path.display());
        let _ = writeln!(out, "output.{}.sha1 = {}", f.name, f.hash);
    }
    for (k, v) in cfg.to_pairs() {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}
