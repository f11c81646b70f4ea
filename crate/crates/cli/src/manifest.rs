use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use form57_core::kie::PhaseTelemetry;
use form57_core::prompts::PromptSetInfo;
use indexmap::IndexMap;
use serde::Serialize;

use crate::config::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Partial,
    Failed,
}

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub tool_version: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_phase: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub backend: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PromptSetInfo>,
    pub config: RunConfig,
    /// Validation attempts per artifact, by phase.
    pub attempts: Vec<PhaseTelemetry>,
    pub timings_ms: IndexMap<String, u64>,
    pub warnings: Vec<String>,
    /// Every file the run wrote, relative to the output directory.
    pub artifacts: Vec<String>,
    #[serde(skip)]
    out_dir: PathBuf,
    #[serde(skip)]
    clock: Option<(String, Instant)>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        out_dir: &Path,
        backend: String,
        prompts: Option<PromptSetInfo>,
        config: RunConfig,
    ) -> Self {
        Self {
            run_id: uuid::Uuid::new_v4().to_string(),
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: Utc::now(),
            finished_at: None,
            status: RunStatus::Ok,
            failed_phase: None,
            error: None,
            backend,
            prompts,
            config,
            attempts: Vec::new(),
            timings_ms: IndexMap::new(),
            warnings: Vec::new(),
            artifacts: Vec::new(),
            out_dir: out_dir.to_path_buf(),
            clock: None,
        }
    }

    /// Starts timing `step`, closing the previous one.
    pub fn step(&mut self, step: &str) {
        self.stop_clock();
        self.clock = Some((step.to_string(), Instant::now()));
    }

    fn stop_clock(&mut self) {
        if let Some((name, start)) = self.clock.take() {
            self.timings_ms
                .insert(name, start.elapsed().as_millis() as u64);
        }
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        tracing::warn!("{message}");
        self.warnings.push(message);
        self.status = RunStatus::Partial;
    }

    /// Writes `contents` atomically under the output directory and lists it.
    pub fn emit(&mut self, relative: &str, contents: &str) -> anyhow::Result<PathBuf> {
        let path = self.out_dir.join(relative);
        form57_core::io::write_atomic(&path, contents.as_bytes())
            .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))?;
        if !self.artifacts.iter().any(|a| a == relative) {
            self.artifacts.push(relative.to_string());
        }
        Ok(path)
    }

    pub fn fail(&mut self, phase: Option<String>, error: &anyhow::Error) {
        self.status = RunStatus::Failed;
        self.failed_phase = phase;
        self.error = Some(format!("{error:#}"));
    }

    /// Writes `manifest.json`; it lists itself.
    pub fn finish(mut self) -> anyhow::Result<RunStatus> {
        self.stop_clock();
        self.finished_at = Some(Utc::now());
        if !self.artifacts.iter().any(|a| a == MANIFEST_FILE) {
            self.artifacts.push(MANIFEST_FILE.to_string());
        }
        let text = form57_core::io::to_pretty_json(&self);
        let path = self.out_dir.join(MANIFEST_FILE);
        form57_core::io::write_atomic(&path, text.as_bytes())
            .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))?;
        Ok(self.status)
    }
}
