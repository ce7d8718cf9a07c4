//! Per-run provenance record, written atomically next to each command's
//! outputs so reruns can be compared and reproduced.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;
use crate::ode::SolverStats;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    /// which command produced this run
    pub command: String,
    /// fully resolved configuration (defaults filled in)
    pub config: Value,
    pub seed: Option<u64>,
    /// `git describe` of the working tree, when available
    pub git_describe: Option<String>,
    #[serde(default)]
    pub solver_stats: SolverStats,
    /// metric or summary values keyed by name
    #[serde(default)]
    pub results: serde_json::Map<String, Value>,
    pub wall_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: Value) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            seed: None,
            git_describe: git_describe(),
            solver_stats: SolverStats::default(),
            results: serde_json::Map::new(),
            wall_secs: 0.0,
        }
    }

    /// Write via a temp file in the same directory plus rename, so a
    /// manifest is never observed half-written.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer_pretty(&mut tmp, self)?;
        use std::io::Write;
        tmp.write_all(b"\n")?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()?;
    if !out.status.success() {
        return None;
    }
    Some(String::from_utf8_lossy(&out.stdout).trim().to_string())
}
