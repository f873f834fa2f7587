use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

/// Record of one command invocation. `command` and `config` are enough to
/// repeat the run (`advlab rerun`); the rest documents it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Effective configuration after flags were merged into the file.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub code_version: String,
    pub oracle_version: String,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub exit_status: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: BTreeMap<String, u64>) -> Self {
        RunManifest {
            command: command.into(),
            config,
            seeds,
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
            oracle_version: advlab::data::ORACLE_VERSION.into(),
            outputs: Vec::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            exit_status: 0,
            error: None,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| CliError::Usage(e.to_string()))?;
        advlab::harness::write_atomic(&dir.join(MANIFEST), format!("{json}\n").as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

/// Every file below `dir`, relative and sorted.
pub fn list_outputs(dir: &Path) -> Vec<String> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for e in entries.flatten() {
            let path = e.path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if let Ok(rel) = path.strip_prefix(root) {
                out.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.retain(|p| p != MANIFEST);
    out.sort();
    out
}
