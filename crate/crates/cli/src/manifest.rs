//! Run manifests: what a command read, what it wrote, and how long it took.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use clueset_core::io;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// Holds measured wall-clock times, so it differs between reruns.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub timing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub wall_times: Vec<WallTime>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn record(path: &Path, shown: String, timing: bool) -> CliResult<FileRecord> {
    let bytes = fs::read(path).map_err(|e| CliError::Failed(format!("cannot read {}: {e}", path.display())))?;
    Ok(FileRecord {
        path: shown,
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
        timing,
    })
}

/// Every regular file under `path` (or `path` itself), sorted by path.
fn files_under(path: &Path) -> CliResult<Vec<PathBuf>> {
    let meta = fs::metadata(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if !meta.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let p = entry.map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Hash of a file or directory tree: sha256 over the sorted
/// `relative path, file hash` lines.
pub fn tree_hash(path: &Path) -> CliResult<String> {
    let mut lines = String::new();
    for f in files_under(path)? {
        let rel = f.strip_prefix(path).unwrap_or(&f);
        let r = record(&f, rel.display().to_string(), false)?;
        lines.push_str(&format!("{} {}\n", r.path, r.sha256));
    }
    Ok(sha256_hex(lines.as_bytes()))
}

/// Collects inputs, outputs and stage times while a command runs, then
/// writes the manifest next to the outputs.
pub struct Recorder {
    command: &'static str,
    out: PathBuf,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
    wall_times: Vec<WallTime>,
}

impl Recorder {
    pub fn new(command: &'static str, out: &Path) -> Self {
        Self {
            command,
            out: out.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_times: Vec::new(),
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    /// Output paths inside the output directory are listed relative to it.
    fn shown(&self, p: &Path) -> String {
        p.strip_prefix(&self.out).unwrap_or(p).display().to_string()
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        for f in files_under(path)? {
            let r = record(&f, f.display().to_string(), false)?;
            if !self.inputs.contains(&r) {
                self.inputs.push(r);
            }
        }
        Ok(())
    }

    fn write_file(&mut self, rel: &str, bytes: &[u8], timing: bool) -> CliResult<()> {
        let path = self.out.join(rel);
        io::write_atomic(&path, bytes)?;
        self.outputs.push(FileRecord {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
            timing,
        });
        Ok(())
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        self.write_file(rel, bytes, false)
    }

    /// Writes a file of measured times.
    pub fn write_timing(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        self.write_file(rel, bytes, true)
    }

    /// Lists files some other writer already put under `path`.
    pub fn written(&mut self, path: &Path) -> CliResult<()> {
        for f in files_under(path)? {
            let shown = self.shown(&f);
            self.outputs.push(record(&f, shown, false)?);
        }
        Ok(())
    }

    pub fn add_time(&mut self, stage: &str, seconds: f64) {
        self.wall_times.push(WallTime {
            stage: stage.to_string(),
            seconds,
        });
    }

    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> CliResult<T>) -> CliResult<T> {
        let start = Instant::now();
        let out = f()?;
        self.add_time(stage, start.elapsed().as_secs_f64());
        Ok(out)
    }

    pub fn finish(self, config: &RunConfig) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            seed: config.seed,
            config: config.clone(),
            inputs: self.inputs,
            outputs: self.outputs,
            wall_times: self.wall_times,
        };
        io::write_atomic(&self.out.join(MANIFEST_FILE), &io::to_json(&manifest)?)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn tree_hash_ignores_location_but_not_content() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [a.path(), b.path()] {
            fs::create_dir_all(d.join("sub")).unwrap();
            fs::write(d.join("x.txt"), "one").unwrap();
            fs::write(d.join("sub/y.txt"), "two").unwrap();
        }
        assert_eq!(tree_hash(a.path()).unwrap(), tree_hash(b.path()).unwrap());
        fs::write(b.path().join("sub/y.txt"), "three").unwrap();
        assert_ne!(tree_hash(a.path()).unwrap(), tree_hash(b.path()).unwrap());
    }

    #[test]
    fn recorder_lists_outputs_relative_to_the_run_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = Recorder::new("test", dir.path());
        rec.write("a.csv", b"h\n1\n").unwrap();
        rec.write_timing("t.csv", b"ms\n2\n").unwrap();
        let m = rec.finish(&RunConfig::default()).unwrap();
        assert_eq!(m.outputs[0].path, "a.csv");
        assert!(!m.outputs[0].timing && m.outputs[1].timing);
        let back: RunManifest = serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
