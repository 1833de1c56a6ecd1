//! Per-stage run manifests, the digest chain between stages, and the output
//! directory lock.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
const LOCK_NAME: &str = ".occunav.lock";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub stage: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub wall_time_s: f64,
    /// File name (or path, for files outside the output directory) → sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn file_name(stage: &str) -> String {
        format!("manifest-{stage}.json")
    }

    pub fn load(dir: &Path, stage: &str) -> Result<Option<Self>, CliError> {
        let path = dir.join(Self::file_name(stage));
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| CliError::Format(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(Self::file_name(&self.stage));
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a sibling temporary file and a rename, so readers never
/// observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Other(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads `name` from the output directory after checking it against the
/// digest recorded by the upstream stage that produced it.
pub fn read_verified(dir: &Path, name: &str, upstream: &str) -> Result<Vec<u8>, CliError> {
    let manifest = RunManifest::load(dir, upstream)?.ok_or_else(|| {
        CliError::Format(format!(
            "{} not found in {}; run `{upstream}` first",
            RunManifest::file_name(upstream),
            dir.display()
        ))
    })?;
    let expected = manifest.outputs.get(name).ok_or_else(|| {
        CliError::Format(format!("{} does not record {name}", RunManifest::file_name(upstream)))
    })?;
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    let actual = sha256_hex(&bytes);
    if &actual != expected {
        return Err(CliError::Format(format!(
            "{name} digest {actual} does not match {expected} recorded by `{upstream}`"
        )));
    }
    Ok(bytes)
}

/// Whether the upstream manifest lists `name` as an output.
pub fn produced_by(dir: &Path, name: &str, upstream: &str) -> Result<bool, CliError> {
    Ok(RunManifest::load(dir, upstream)?.is_some_and(|m| m.outputs.contains_key(name)))
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(LOCK_NAME);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Other(format!(
                "{} exists: another run is using this output directory (remove the file if it is stale)",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
