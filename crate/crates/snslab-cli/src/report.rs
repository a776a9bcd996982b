//! Run outputs: CSV tables, the resolved-config echo, and the manifest with
//! content checksums. Every table carries a header row naming columns and
//! units; dimensionless columns are tagged `[-]`, simulation-time columns
//! `[sim]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Accumulates files of one run and writes the manifest at the end.
pub struct RunWriter {
    dir: PathBuf,
    files: BTreeMap<String, (u64, String)>,
    started: Instant,
    /// Indices of trajectories that failed, with reasons.
    pub failures: Vec<(u64, String)>,
    command: String,
    config_hash: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

impl RunWriter {
    /// Creates the output directory and echoes the resolved configuration
    /// into it.
    pub fn create(
        dir: &Path,
        config: &ExperimentConfig,
        command: String,
    ) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let resolved = crate::config::serialize_config(config)?;
        let config_hash = sha256_hex(resolved.as_bytes());
        let mut writer = RunWriter {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
            started: Instant::now(),
            failures: Vec::new(),
            command,
            config_hash,
        };
        writer.write_bytes("config.resolved.toml", resolved.as_bytes())?;
        Ok(writer)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.files
            .insert(name.to_string(), (bytes.len() as u64, sha256_hex(bytes)));
        Ok(())
    }

    /// Writes a CSV table with RFC-4180-style quoting.
    pub fn write_csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)
            .map_err(|e| CliError::Other(format!("csv: {e}")))?;
        for row in rows {
            w.write_record(row)
                .map_err(|e| CliError::Other(format!("csv: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::Other(format!("csv: {e}")))?;
        self.write_bytes(name, &bytes)
    }

    /// Writes the manifest atomically (temp file, then rename), marking the
    /// run complete.
    pub fn finalize(self, incomplete: bool) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct FileEntry {
            name: String,
            bytes: u64,
            sha256: String,
        }
        #[derive(Serialize)]
        struct Manifest {
            config_hash: String,
            artifact_version: String,
            command: String,
            wall_clock_seconds: f64,
            incomplete: bool,
            trajectory_failures: Vec<(u64, String)>,
            files: Vec<FileEntry>,
        }
        let manifest = Manifest {
            config_hash: self.config_hash.clone(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.clone(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            incomplete,
            trajectory_failures: self.failures.clone(),
            files: self
                .files
                .iter()
                .map(|(name, (bytes, sha256))| FileEntry {
                    name: name.clone(),
                    bytes: *bytes,
                    sha256: sha256.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Other(format!("manifest: {e}")))?;
        let tmp = self.dir.join("manifest.json.tmp");
        fs::write(&tmp, json.as_bytes())?;
        fs::rename(&tmp, self.dir.join("manifest.json"))?;
        Ok(())
    }
}

/// Formats a float for CSV output (shortest exact representation).
pub fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Outcome of one experiment: pass/fail plus the human-readable lines that
/// were printed.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub kind: &'static str,
    pub passed: bool,
    pub lines: Vec<String>,
}

impl ExperimentOutcome {
    pub fn summary_line(&self) -> String {
        format!(
            "RESULT {}: {}",
            self.kind,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}
