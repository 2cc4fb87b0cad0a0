use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn curvlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curvlab"))
        .args(args)
        .env("CURVLAB_THREADS", "1")
        .output()
        .expect("spawn curvlab")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit status")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).expect("read")).expect("json")
}

fn flat_bound(name: &str, k: f64) -> String {
    format!(
        r#"{{"schema_version": 1, "name": "{name}", "kind": "bound-check", "metric": {{"kind": "flat"}},
            "N": 16, "eps_list": [0.25, 0.125], "K": {k:?}, "delta_list": [0.05], "params": {{"tail": 2}}}}"#
    )
}

#[test]
fn flat_zero_bound_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("flat.json");
    fs::write(&scn, flat_bound("flat", 0.0)).unwrap();
    let out = dir.path().join("out");
    let o = curvlab(&["run", scn.to_str().unwrap(), "--assert", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["verdict"], true);
    for f in m["files"].as_array().unwrap() {
        let bytes = fs::read(out.join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64(), Some(bytes.len() as u64));
    }
}

#[test]
fn positive_bound_on_flat_fails_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("flat.json");
    fs::write(&scn, flat_bound("flat-positive", 0.1)).unwrap();
    let out = dir.path().join("out");
    let o = curvlab(&["run", scn.to_str().unwrap(), "--assert", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let report = read_json(&out.join("bound_report.json"));
    let v = &report["verdicts"][0];
    assert_eq!(v["holds"], false);
    assert!(v["witness"]["node"].is_array());

    // Without --assert a mismatched verdict is not an error.
    let o = curvlab(&["run", scn.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
}

#[test]
fn schema_error_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let scn = dir.path().join("bad.json");
    fs::write(&scn, r#"{"schema_version": 1, "name": "bad", "kind": "bound-check", "metric": {"kind": "flat"}, "N": 16, "bogus": 1}"#).unwrap();
    let o = curvlab(&[
        "run",
        scn.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn runtime_error_exits_three_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let half = dir.path().join("half.csv");
    fs::write(&half, "x,y,weight\n0.1,0.2,0.25\n0.6,0.7,0.25\n").unwrap();
    let scn = dir.path().join("ot.json");
    let body = serde_json::json!({
        "schema_version": 1, "name": "ot-bad", "kind": "ot", "metric": {"kind": "flat"}, "N": 16,
        "params": {"instances": 0, "measure_files": [half, half]}
    });
    fs::write(&scn, body.to_string()).unwrap();
    let out = dir.path().join("out");
    let o = curvlab(&["run", scn.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["status"], "error");
    assert!(m["error"].as_str().is_some_and(|e| !e.is_empty()));
    assert!(m["verdict"].is_null());
}

#[test]
fn empty_suite_passes_with_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let scenarios = dir.path().join("scenarios");
    fs::create_dir(&scenarios).unwrap();
    let out = dir.path().join("out");
    let o = curvlab(&["suite", scenarios.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let table = fs::read_to_string(out.join("suite_summary.csv")).unwrap();
    let data: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data.len(), 1, "header only: {table}");
}

#[test]
fn suite_marks_failing_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let scenarios = dir.path().join("scenarios");
    fs::create_dir(&scenarios).unwrap();
    fs::write(scenarios.join("a.json"), flat_bound("good", 0.0)).unwrap();
    fs::write(scenarios.join("b.json"), flat_bound("bad", 0.1)).unwrap();
    let out = dir.path().join("out");
    let o = curvlab(&["suite", scenarios.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(out.join("suite_summary.csv"))
        .unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((&rows[0][1], &rows[0][5]), ("good", "true"));
    assert_eq!((&rows[1][1], &rows[1][3], &rows[1][5]), ("bad", "fails", "false"));
    assert!(out.join("good").join("manifest.json").exists());
}

#[test]
fn bundled_conformal_smooth_reproduces_curvature_oracle() {
    let scn = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/examples/conformal-smooth.json");
    let dir = tempfile::tempdir().unwrap();
    let o = curvlab(&["run", scn, "--assert", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let r = &read_json(&dir.path().join("summary.json"))["results"];
    let k_min = -8.0 * std::f64::consts::PI.powi(2) * 0.05 * 0.1f64.exp();
    assert!((r["K"].as_f64().unwrap() - k_min).abs() < 1e-6);
    assert!(r["ric_error_sup"].as_f64().unwrap() <= 5e-3);
    assert_eq!(r["holds"], true);
}
