//! CSV artifacts and the per-run manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Column {
    pub name: &'static str,
    pub description: &'static str,
}

pub const fn col(name: &'static str, description: &'static str) -> Column {
    Column { name, description }
}

/// One CSV file; `body` includes the header row.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub label: String,
    pub columns: Vec<Column>,
    pub body: Vec<u8>,
}

impl Artifact {
    pub fn new(label: impl Into<String>, columns: &[Column], body: Vec<u8>) -> Self {
        Self {
            label: label.into(),
            columns: columns.to_vec(),
            body,
        }
    }

    fn check_header(&self) -> anyhow::Result<()> {
        let header = self.body.split(|&b| b == b'\n').next().unwrap_or_default();
        let expected = self.columns.iter().map(|c| c.name).collect::<Vec<_>>().join(",");
        if header != expected.as_bytes() {
            bail!(
                "artifact {} header {:?} does not match its schema {expected:?}",
                self.label,
                String::from_utf8_lossy(header)
            );
        }
        Ok(())
    }

    fn rows(&self) -> usize {
        self.body.iter().filter(|&&b| b == b'\n').count().saturating_sub(1)
    }
}

/// Result of one experiment: its CSV artifacts and a JSON summary.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub experiment: &'static str,
    pub artifacts: Vec<Artifact>,
    pub summary: serde_json::Value,
    /// Whether the CSV bodies are a pure function of config and seed.
    pub deterministic: bool,
}

#[derive(Serialize)]
struct ArtifactEntry<'a> {
    file: String,
    rows: usize,
    sha256: String,
    columns: &'a [Column],
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    code_version: &'a str,
    seed: u64,
    config_hash: String,
    config: &'a ExperimentConfig,
    threads: usize,
    created_unix: u64,
    deterministic: bool,
    artifacts: Vec<ArtifactEntry<'a>>,
    summary: &'a serde_json::Value,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the effective config in canonical JSON form.
pub fn config_hash(cfg: &ExperimentConfig) -> anyhow::Result<String> {
    Ok(hex(&Sha256::digest(serde_json::to_vec(cfg)?)))
}

/// Write `<experiment>_<label>.csv` for each artifact and
/// `<experiment>_manifest.json`; returns the manifest path.
pub fn write_run(out_dir: &Path, run: &RunOutput, cfg: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
    let mut entries = Vec::new();
    for a in &run.artifacts {
        a.check_header()?;
        let file = format!("{}_{}.csv", run.experiment, a.label);
        let path = out_dir.join(&file);
        std::fs::write(&path, &a.body).with_context(|| format!("cannot write {}", path.display()))?;
        entries.push(ArtifactEntry {
            file,
            rows: a.rows(),
            sha256: hex(&Sha256::digest(&a.body)),
            columns: &a.columns,
        });
    }
    let manifest = Manifest {
        experiment: run.experiment,
        code_version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config_hash: config_hash(cfg)?,
        config: cfg,
        threads: rayon::current_num_threads(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        deterministic: run.deterministic,
        artifacts: entries,
        summary: &run.summary,
    };
    let path = out_dir.join(format!("{}_manifest.json", run.experiment));
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}
