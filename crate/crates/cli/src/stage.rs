//! Stage outputs are written into a scratch directory inside the run
//! directory and moved into place only once everything, manifest included,
//! has been written.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpstreamRef {
    pub stage: String,
    /// See [`content_sha256`].
    pub manifest_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_ms: f64,
    pub items: u64,
    pub items_per_sec: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub parameters: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub upstream: Vec<UpstreamRef>,
    pub outputs: Vec<FileHash>,
    pub timing: Timing,
}

pub fn sha256_file(path: &Path) -> io::Result<(String, u64)> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((format!("{:x}", hasher.finalize()), total))
}

/// Hash of a manifest without its timing block, so reruns of an unchanged
/// stage chain to the same value.
pub fn content_sha256(manifest: &Manifest) -> String {
    let mut v = serde_json::to_value(manifest).expect("manifests serialize");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timing");
    }
    format!("{:x}", Sha256::digest(v.to_string().as_bytes()))
}

pub fn read_manifest(stage_dir: &Path) -> Result<Manifest, CliError> {
    let path = stage_dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|_| {
        CliError::new(
            "missing_input",
            format!("{} not found; run the upstream stage first", path.display()),
        )
    })?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::new("schema", format!("{}: {e}", path.display())))
}

pub struct Stage {
    name: &'static str,
    run_dir: PathBuf,
    staging: TempDir,
    parameters: serde_json::Value,
    inputs: Vec<FileHash>,
    upstream: Vec<UpstreamRef>,
    outputs: Vec<String>,
    started: Instant,
}

impl Stage {
    pub fn begin(
        run_dir: &Path,
        name: &'static str,
        parameters: impl Serialize,
    ) -> Result<Stage, CliError> {
        fs::create_dir_all(run_dir)?;
        let staging = tempfile::Builder::new()
            .prefix(&format!(".staging-{name}-"))
            .tempdir_in(run_dir)?;
        Ok(Stage {
            name,
            run_dir: run_dir.to_path_buf(),
            staging,
            parameters: serde_json::to_value(parameters)
                .map_err(|e| CliError::new("internal", e.to_string()))?,
            inputs: Vec::new(),
            upstream: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Record an external input file.
    pub fn input(&mut self, path: &Path) -> Result<PathBuf, CliError> {
        let (sha256, bytes) = sha256_file(path)
            .map_err(|e| CliError::new("missing_input", format!("{}: {e}", path.display())))?;
        self.inputs.push(FileHash {
            path: path.display().to_string(),
            sha256,
            bytes,
        });
        Ok(path.to_path_buf())
    }

    /// Path of a file produced by an earlier stage, checked against that
    /// stage's manifest.
    pub fn upstream_file(&mut self, stage: &str, file: &str) -> Result<PathBuf, CliError> {
        let dir = self.run_dir.join(stage);
        let manifest = read_manifest(&dir)?;
        let rel = format!("{stage}/{file}");
        let Some(recorded) = manifest.outputs.iter().find(|o| o.path == rel) else {
            return Err(CliError::new(
                "missing_input",
                format!("stage {stage} did not produce {file}"),
            ));
        };
        let path = dir.join(file);
        let (sha256, bytes) = sha256_file(&path)?;
        if sha256 != recorded.sha256 {
            return Err(CliError::new(
                "schema",
                format!("{rel} changed since stage {stage} wrote it; rerun {stage}"),
            ));
        }
        if !self.upstream.iter().any(|u| u.stage == stage) {
            self.upstream.push(UpstreamRef {
                stage: stage.to_string(),
                manifest_sha256: content_sha256(&manifest),
            });
        }
        self.inputs.push(FileHash {
            path: rel,
            sha256,
            bytes,
        });
        Ok(path)
    }

    /// Create an output file in the scratch directory.
    pub fn create(&mut self, file: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.staging.path().join(file);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        self.outputs.push(file.to_string());
        Ok(BufWriter::new(File::create(path)?))
    }

    pub fn write(&mut self, file: &str, bytes: &[u8]) -> Result<(), CliError> {
        let mut w = self.create(file)?;
        w.write_all(bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&mut self, file: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::new("internal", e.to_string()))?;
        text.push('\n');
        self.write(file, text.as_bytes())
    }

    /// Hash outputs, write the manifest and swap the stage directory into
    /// place.
    pub fn commit(self, items: u64) -> Result<Manifest, CliError> {
        let mut outputs = Vec::new();
        let mut files = self.outputs.clone();
        files.sort();
        files.dedup();
        for f in files {
            let (sha256, bytes) = sha256_file(&self.staging.path().join(&f))?;
            outputs.push(FileHash {
                path: format!("{}/{f}", self.name),
                sha256,
                bytes,
            });
        }
        let elapsed = self.started.elapsed().as_secs_f64();
        let manifest = Manifest {
            stage: self.name.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            parameters: self.parameters,
            inputs: self.inputs,
            upstream: self.upstream,
            outputs,
            timing: Timing {
                elapsed_ms: elapsed * 1000.0,
                items,
                items_per_sec: if elapsed > 0.0 {
                    items as f64 / elapsed
                } else {
                    0.0
                },
            },
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::new("internal", e.to_string()))?;
        text.push('\n');
        fs::write(self.staging.path().join(MANIFEST), text)?;

        let target = self.run_dir.join(self.name);
        if target.exists() {
            let old = tempfile::Builder::new()
                .prefix(&format!(".old-{}-", self.name))
                .tempdir_in(&self.run_dir)?;
            fs::rename(&target, old.path().join(self.name))?;
            fs::rename(self.staging.path(), &target)?;
            drop(old);
        } else {
            fs::rename(self.staging.path(), &target)?;
        }
        Ok(manifest)
    }
}
