//! Running every scenario in a directory.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Result, RunError};
use crate::io::Table;
use crate::run::{run_file, RunOptions};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteRow {
    pub file: String,
    pub name: String,
    pub kind: String,
    /// `holds`, `fails` or `error`.
    pub verdict: String,
    pub expected: String,
    pub passed: bool,
    pub exit_code: i32,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
    pub summary_path: PathBuf,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_passed() {
            0
        } else {
            1
        }
    }
}

/// Scenario files (`*.json`) directly inside `dir`, sorted by name.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| RunError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Run all scenarios in parallel, each into `out_root/<name>`, and write
/// `out_root/suite_summary.csv`. Scenario failures are recorded, not
/// propagated.
pub fn run_suite(dir: &Path, out_root: &Path) -> Result<SuiteReport> {
    let files = scenario_files(dir)?;
    let rows: Vec<SuiteRow> = files
        .par_iter()
        .map(|path| {
            let file = path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default();
            let stem = path
                .file_stem()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default();
            let loaded = crate::scenario::Scenario::load(path);
            let out = match &loaded {
                Ok(s) => out_root.join(&s.name),
                Err(_) => out_root.join(&stem),
            };
            let opts = RunOptions {
                out: Some(out),
                assert: true,
            };
            match loaded.and_then(|s| run_file(path, &opts).map(|r| (s, r))) {
                Ok((s, r)) => SuiteRow {
                    file,
                    name: s.name.clone(),
                    kind: s.kind.as_str().into(),
                    verdict: match r.manifest.verdict {
                        Some(true) => "holds".into(),
                        Some(false) => "fails".into(),
                        None => "error".into(),
                    },
                    expected: if s.expect_verdict { "holds" } else { "fails" }.into(),
                    passed: r.manifest.passed,
                    exit_code: r.exit_code,
                    message: r.manifest.error.clone().unwrap_or_default(),
                },
                Err(e) => SuiteRow {
                    file,
                    name: stem,
                    kind: String::new(),
                    verdict: "error".into(),
                    expected: String::new(),
                    passed: false,
                    exit_code: e.exit_code(),
                    message: e.to_string(),
                },
            }
        })
        .collect();

    let mut t = Table::new(
        "suite results: one row per scenario file",
        &[
            "file",
            "name",
            "kind",
            "verdict",
            "expected",
            "passed",
            "exit_code",
            "message",
        ],
    );
    for r in &rows {
        t.push(vec![
            r.file.clone(),
            r.name.clone(),
            r.kind.clone(),
            r.verdict.clone(),
            r.expected.clone(),
            r.passed.to_string(),
            r.exit_code.to_string(),
            r.message.clone(),
        ]);
    }
    fs::create_dir_all(out_root).map_err(|e| RunError::io(out_root, e))?;
    let summary_path = out_root.join("suite_summary.csv");
    fs::write(&summary_path, t.to_bytes()).map_err(|e| RunError::io(&summary_path, e))?;
    Ok(SuiteReport { rows, summary_path })
}
