//! Per-run manifests: written as a stub before execution, finalized after.
//! Every artifact a run produces is referenced here.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::{outputs, CliError, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FinalMetrics {
    pub target_miou: f64,
    pub source_miou: f64,
    pub mean_change_classifier: Option<f64>,
    pub mean_change_discriminator: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: RunStatus,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub wall_secs: Option<f64>,
    pub outputs: Vec<String>,
    pub final_metrics: Option<FinalMetrics>,
    pub error: Option<String>,
}

pub fn version_string() -> String {
    format!("mtseg-v{}", env!("CARGO_PKG_VERSION"))
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn stub(config_hash: &str, seed: u64) -> Self {
        Self {
            version: version_string(),
            config_hash: config_hash.to_string(),
            seed,
            status: RunStatus::Running,
            started_unix: now_unix(),
            finished_unix: None,
            wall_secs: None,
            outputs: Vec::new(),
            final_metrics: None,
            error: None,
        }
    }

    pub fn finalize(&mut self, outputs: Vec<String>, metrics: FinalMetrics, wall_secs: f64) {
        self.status = RunStatus::Complete;
        self.finished_unix = Some(now_unix());
        self.wall_secs = Some(wall_secs);
        self.outputs = outputs;
        self.final_metrics = Some(metrics);
    }

    pub fn fail(&mut self, error: String) {
        self.status = RunStatus::Failed;
        self.finished_unix = Some(now_unix());
        self.error = Some(error);
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        outputs::write_text(&dir.join(MANIFEST_NAME), &text)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::BadFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// A completed manifest for this config hash, if one exists in `dir`.
    pub fn completed(dir: &Path, config_hash: &str) -> Option<Self> {
        let m = Self::load(dir).ok()?;
        (m.status == RunStatus::Complete && m.config_hash == config_hash).then_some(m)
    }
}
