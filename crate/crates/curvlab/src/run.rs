//! Running one scenario: dispatch, artifact writing and the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, RunError};
pub(crate) use crate::experiments::validate_params;
use crate::experiments::{execute, Ctx, Outcome};
use crate::io::json_bytes;
use crate::scenario::{Scenario, SCHEMA_VERSION};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the scenario's output directory.
    pub out: Option<PathBuf>,
    /// Exit with status 1 when the verdict differs from the expected one.
    pub assert: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInfo {
    pub name: String,
    pub version: String,
    pub core_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

/// Config echo, versions, verdict and content hashes of every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: ToolInfo,
    pub scenario: Scenario,
    pub status: Status,
    /// Absent when the run failed.
    pub verdict: Option<bool>,
    pub expected_verdict: bool,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub files: Vec<FileEntry>,
    pub summary: String,
}

/// What a finished run reports back to the caller.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub exit_code: i32,
}

impl RunReport {
    pub fn summary_line(&self) -> &str {
        &self.manifest.summary
    }
}

fn tool() -> ToolInfo {
    ToolInfo {
        name: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        core_version: curvlab_core::VERSION.into(),
    }
}

pub fn output_dir(scn: &Scenario, opts: &RunOptions) -> PathBuf {
    opts.out
        .clone()
        .or_else(|| scn.output_dir.clone())
        .unwrap_or_else(|| Path::new("out").join(&scn.name))
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<FileEntry> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| RunError::io(&path, e))?;
    Ok(FileEntry {
        name: name.into(),
        sha256: hex::encode(Sha256::digest(bytes)),
        bytes: bytes.len() as u64,
    })
}

fn summary_line(scn: &Scenario, verdict: Option<bool>, passed: bool, error: Option<&str>) -> String {
    let v = match verdict {
        Some(true) => "holds",
        Some(false) => "fails",
        None => "error",
    };
    let mut line = format!(
        "{}: {} verdict {v} (expected {}) {}",
        scn.name,
        scn.kind.as_str(),
        if scn.expect_verdict { "holds" } else { "fails" },
        if passed { "PASS" } else { "FAIL" }
    );
    if let Some(e) = error {
        line.push_str(&format!(": {e}"));
    }
    line
}

/// Run a validated scenario and write its artifacts. Numerical failures are
/// recorded in the manifest (exit status 3); only IO failures while writing
/// the artifacts themselves are returned as errors.
pub fn run_scenario(scn: &Scenario, opts: &RunOptions) -> Result<RunReport> {
    let out_dir = output_dir(scn, opts);
    fs::create_dir_all(&out_dir).map_err(|e| RunError::io(&out_dir, e))?;
    let outcome: Result<Outcome> = Ctx::new(scn, &out_dir).and_then(|ctx| execute(&ctx));

    let (files, verdict, error, mut exit_code) = match outcome {
        Ok(o) => {
            let mut files = Vec::with_capacity(o.files.len() + 1);
            for (name, bytes) in &o.files {
                files.push(write(&out_dir, name, bytes)?);
            }
            let summary = serde_json::json!({
                "name": scn.name,
                "kind": scn.kind.as_str(),
                "verdict": o.verdict,
                "expected_verdict": scn.expect_verdict,
                "results": o.summary,
            });
            files.push(write(&out_dir, "summary.json", &json_bytes(&summary))?);
            (files, Some(o.verdict), None, 0)
        }
        Err(e) => {
            let code = e.exit_code();
            (Vec::new(), None, Some(e.to_string()), code)
        }
    };
    let passed = verdict == Some(scn.expect_verdict);
    if exit_code == 0 && opts.assert && !passed {
        exit_code = 1;
    }
    let summary = summary_line(scn, verdict, passed, error.as_deref());
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool: tool(),
        scenario: scn.clone(),
        status: if error.is_some() { Status::Error } else { Status::Ok },
        verdict,
        expected_verdict: scn.expect_verdict,
        passed,
        error,
        files,
        summary,
    };
    write(&out_dir, "manifest.json", &json_bytes(&manifest))?;
    Ok(RunReport {
        out_dir,
        manifest,
        exit_code,
    })
}

/// Load, validate and run a scenario file.
pub fn run_file(path: &Path, opts: &RunOptions) -> Result<RunReport> {
    let scn = Scenario::load(path)?;
    run_scenario(&scn, opts)
}
