//! End-to-end runs: ingest, analyze, simulate, sensitivity sweeps and
//! free-flow cache warming. Each run writes its reports plus a
//! `run_manifest.json`, also when it fails.

mod analyze;
mod report;
mod simulate;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use analyze::{
    build_provider, run_analyze, run_freeflow_fetch, run_ingest, run_sensitivity, AnalyzeConfig,
    AnalyzeOutcome, FreeFlowSettings, ProviderChoice, SensitivityConfig, SensitivityPoint,
};
pub use report::{ccdf_csv, histogram_csv};
pub use simulate::{run_simulate, FlowChoice, SimInstance, SimulateConfig, SimulateOutcome};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Cluster,
    Consistency,
    Regret,
    FreeFlow,
    Soc,
    Simulate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().expect("stage is a string"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Internal,
    InvalidInput,
    Provider,
}

#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: FailureKind,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, kind: FailureKind, message: impl ToString) -> Self {
        PipelineError {
            stage,
            kind,
            message: message.to_string(),
        }
    }

    pub fn invalid(stage: Stage, message: impl ToString) -> Self {
        Self::new(stage, FailureKind::InvalidInput, message)
    }

    pub fn internal(stage: Stage, message: impl ToString) -> Self {
        Self::new(stage, FailureKind::Internal, message)
    }

    /// 1 internal error, 2 invalid input, 3 provider failure.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            FailureKind::Internal => 1,
            FailureKind::InvalidInput => 2,
            FailureKind::Provider => 3,
        }
    }
}

pub type PipelineResult<T> = Result<T, PipelineError>;

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects what a run read, wrote and measured, then writes
/// `run_manifest.json` whether or not the run succeeded.
#[derive(Debug)]
pub(crate) struct Manifest {
    command: &'static str,
    out_dir: PathBuf,
    config: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
    /// Run-specific facts (call counts, cache hits) kept apart from the
    /// deterministic reports.
    runtime: serde_json::Map<String, Value>,
    started: chrono::DateTime<chrono::Utc>,
    clock: std::time::Instant,
}

impl Manifest {
    pub(crate) fn new(command: &'static str, out_dir: &Path, config: &impl Serialize) -> Self {
        Manifest {
            command,
            out_dir: out_dir.to_path_buf(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            inputs: Vec::new(),
            outputs: Vec::new(),
            runtime: serde_json::Map::new(),
            started: chrono::Utc::now(),
            clock: std::time::Instant::now(),
        }
    }

    pub(crate) fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub(crate) fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub(crate) fn runtime(&mut self, key: &str, value: Value) {
        self.runtime.insert(key.to_string(), value);
    }

    pub(crate) fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Writes the manifest; `result` decides the status block.
    pub(crate) fn finish<T>(mut self, result: PipelineResult<T>) -> PipelineResult<T> {
        let inputs: serde_json::Map<String, Value> = self
            .inputs
            .iter()
            .map(|p| {
                let hash = sha256_file(p).map(Value::String).unwrap_or(Value::Null);
                (p.display().to_string(), hash)
            })
            .collect();
        let (status, failure) = match &result {
            Ok(_) => ("ok", Value::Null),
            Err(e) => (
                "failed",
                json!({
                    "stage": e.stage,
                    "kind": e.kind,
                    "message": e.message,
                    "exit_code": e.exit_code(),
                }),
            ),
        };
        self.outputs.sort();
        self.outputs.dedup();
        let finished = chrono::Utc::now();
        let doc = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "status": status,
            "failure": failure,
            "config": self.config,
            "inputs": inputs,
            "outputs": self.outputs,
            "runtime": self.runtime,
            "started_at": self.started.to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            "finished_at": finished.to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            "elapsed_s": self.clock.elapsed().as_secs_f64(),
        });
        let written = std::fs::create_dir_all(&self.out_dir)
            .and_then(|_| std::fs::write(self.out(MANIFEST_FILE), pretty(&doc)));
        match (result, written) {
            (Ok(v), Ok(())) => Ok(v),
            (Ok(_), Err(e)) => Err(PipelineError::internal(Stage::Report, format!("{MANIFEST_FILE}: {e}"))),
            (Err(e), w) => {
                if let Err(we) = w {
                    log::error!("could not write {MANIFEST_FILE}: {we}");
                }
                Err(e)
            }
        }
    }
}

pub(crate) fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_records_failures() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, "abc").unwrap();
        let mut m = Manifest::new("analyze", dir.path(), &json!({"k": 1}));
        m.input(&input);
        let r: PipelineResult<()> = m.finish(Err(PipelineError::invalid(Stage::Ingest, "empty dataset")));
        assert_eq!(r.unwrap_err().exit_code(), 2);
        let doc: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(doc["status"], "failed");
        assert_eq!(doc["failure"]["stage"], "ingest");
        assert_eq!(
            doc["inputs"][input.display().to_string()],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
