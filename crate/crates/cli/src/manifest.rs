//! Run manifests: what a command read and wrote, with content hashes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use faultdg_core::rng::sha256_hex;
use serde::{Deserialize, Serialize};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// `path` relative to `base` when it lies inside it, else as given.
fn display_rel(path: &Path, base: &Path) -> String {
    let canon = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    match canon(path).strip_prefix(canon(base)) {
        Ok(rel) => rel.display().to_string(),
        Err(_) => path.display().to_string(),
    }
}

/// Collects inputs and outputs of one command run.
pub struct Recorder {
    out_dir: PathBuf,
    command: String,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

impl Recorder {
    pub fn new(out_dir: &Path, command: &str) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            command: command.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Verifies `path` against any manifest next to it, then records it.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = verify_input(path)?;
        self.inputs.push(FileHash {
            path: display_rel(path, &self.out_dir),
            sha256,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let sha256 = hash_file(path)?;
        self.outputs.push(FileHash {
            path: display_rel(path, &self.out_dir),
            sha256,
        });
        Ok(())
    }

    /// Writes `<stem>.manifest.json` into the output directory.
    pub fn finish(self, stem: &str, config: serde_json::Value, seeds: serde_json::Value) -> Result<PathBuf> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            config,
            seeds,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let path = self.out_dir.join(format!("{stem}{MANIFEST_SUFFIX}"));
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Hashes `path` and checks it against every manifest in its directory that
/// lists it as an output. Files no manifest mentions are accepted as-is.
pub fn verify_input(path: &Path) -> Result<String> {
    if !path.is_file() {
        bail!("{}: input file not found", path.display());
    }
    let actual = hash_file(path)?;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let target = fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))?;
    let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(MANIFEST_SUFFIX))
        .collect();
    entries.sort();
    for mpath in entries {
        let text = fs::read(&mpath).with_context(|| format!("reading {}", mpath.display()))?;
        let manifest: RunManifest =
            serde_json::from_slice(&text).with_context(|| format!("{}: malformed run manifest", mpath.display()))?;
        for out in &manifest.outputs {
            let listed = dir.join(&out.path);
            if fs::canonicalize(&listed).ok().as_deref() == Some(target.as_path()) && out.sha256 != actual {
                bail!(
                    "{}: content hash {} does not match {} recorded in {}",
                    path.display(),
                    actual,
                    out.sha256,
                    mpath.display()
                );
            }
        }
    }
    Ok(actual)
}
