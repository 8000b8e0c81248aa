//! Atomic output directories and run manifests.
//!
//! Artifacts are written into a hidden sibling directory which is renamed
//! onto the requested path once every file, including `manifest.json`, is
//! in place. Manifests carry no timestamps or host details so that reruns
//! produce identical trees.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub exchange_format_version: u32,
    pub command: &'static str,
    pub seed: Option<u64>,
    /// Every option that shaped the run, input paths included.
    pub options: Value,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &'static str, seed: Option<u64>, options: &impl Serialize) -> Result<Self> {
        Ok(Manifest {
            tool: "gomkit",
            version: env!("CARGO_PKG_VERSION"),
            exchange_format_version: gomkit::exchange::FORMAT_VERSION,
            command,
            seed,
            options: serde_json::to_value(options)?,
            outputs: Vec::new(),
        })
    }
}

pub fn to_json_bytes(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn staging_path(target: &Path) -> Result<PathBuf> {
    let name = target
        .file_name()
        .with_context(|| format!("output path {} has no file name", target.display()))?
        .to_string_lossy();
    let parent = target
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    Ok(parent.join(format!(".{name}.partial-{}", std::process::id())))
}

/// An output directory under construction.
pub struct OutputDir {
    target: PathBuf,
    staging: PathBuf,
    files: Vec<String>,
    finished: bool,
}

impl OutputDir {
    /// Fails if `target` exists and is not an empty directory.
    pub fn create(target: &Path) -> Result<Self> {
        if target.exists() {
            let empty_dir = target.is_dir() && fs::read_dir(target)?.next().is_none();
            if !empty_dir {
                bail!("output directory {} already exists and is not empty", target.display());
            }
        }
        let staging = staging_path(target)?;
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging).with_context(|| format!("creating {}", staging.display()))?;
        Ok(OutputDir {
            target: target.to_path_buf(),
            staging,
            files: Vec::new(),
            finished: false,
        })
    }

    /// Writes `bytes` to the relative path `rel` (with `/` separators).
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.staging.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {rel}"))?;
        self.files.push(rel.to_string());
        Ok(())
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        self.write(rel, &to_json_bytes(value)?)
    }

    /// Writes the manifest and moves the directory into place.
    pub fn finish(mut self, mut manifest: Manifest) -> Result<PathBuf> {
        self.files.sort();
        manifest.outputs = std::mem::take(&mut self.files);
        fs::write(self.staging.join(MANIFEST_NAME), to_json_bytes(&manifest)?)?;
        if self.target.is_dir() {
            fs::remove_dir(&self.target)?;
        }
        fs::rename(&self.staging, &self.target)
            .with_context(|| format!("moving output into {}", self.target.display()))?;
        self.finished = true;
        Ok(self.target.clone())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.finished {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

/// Writes a single file atomically, refusing to replace an existing one.
pub fn write_new_file(target: &Path, bytes: &[u8]) -> Result<()> {
    if target.exists() {
        bail!("output file {} already exists", target.display());
    }
    let staging = staging_path(target)?;
    fs::write(&staging, bytes).with_context(|| format!("writing {}", staging.display()))?;
    fs::rename(&staging, target).with_context(|| format!("moving output into {}", target.display()))?;
    Ok(())
}

/// File-name-safe form of a label.
pub fn file_stem(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() {
        "unlabelled".into()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_non_empty_target() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), b"1").unwrap();
        assert!(OutputDir::create(dir.path()).is_err());
    }

    #[test]
    fn abandoned_output_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("out");
        {
            let mut out = OutputDir::create(&target).unwrap();
            out.write("a/b.txt", b"hi").unwrap();
        }
        assert!(!target.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn finished_output_lists_its_files() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("out");
        fs::create_dir(&target).unwrap();
        let mut out = OutputDir::create(&target).unwrap();
        out.write("z.txt", b"z").unwrap();
        out.write("a/b.txt", b"b").unwrap();
        out.finish(Manifest::new("test", None, &()).unwrap()).unwrap();
        let manifest: Value = serde_json::from_slice(&fs::read(target.join(MANIFEST_NAME)).unwrap()).unwrap();
        assert_eq!(manifest["outputs"], serde_json::json!(["a/b.txt", "z.txt"]));
    }

    #[test]
    fn stems_are_sanitized() {
        assert_eq!(file_stem("wave/left arm"), "wave_left_arm");
        assert_eq!(file_stem(""), "unlabelled");
    }
}
