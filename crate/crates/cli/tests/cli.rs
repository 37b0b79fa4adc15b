use quiver_wp::scenario::{presets, Scenario};
use quiver_wp_cli::run::{run_file, run_scenario};
use quiver_wp_cli::suites::{run_check, CheckOptions};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_quiver-wp"))
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn shipped_files_are_canonical_presets() {
    for (file, scn) in presets::shipped() {
        let text = std::fs::read_to_string(scenarios_dir().join(file)).unwrap_or_else(|e| panic!("{file}: {e}"));
        assert_eq!(text, scn.to_canonical(), "{file} differs from its preset");
        let parsed = Scenario::from_json(&text).unwrap();
        assert_eq!(parsed.to_canonical(), text, "{file} does not round-trip");
    }
}

#[test]
fn empty_scenario_runs_clean() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin().args(["run", "--scenario"]).arg(scenarios_dir().join("empty.scn")).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["failure"].is_null());
}

#[test]
fn infeasible_reports_trace_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["run", "--scenario"]).arg(scenarios_dir().join("infeasible.scn")).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["failure"]["message"].as_str().unwrap().contains("trace constraint"));
    assert_eq!(report["exit_code"], 2);
}

#[test]
fn input_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = bin().args(["run", "--scenario", "/nonexistent/x.scn", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(missing.code(), Some(1));
    let p = dir.path().join("v2.scn");
    std::fs::write(&p, presets::empty().to_canonical().replace("\"schema_version\": 1", "\"schema_version\": 2")).unwrap();
    assert_eq!(bin().args(["run", "--scenario"]).arg(&p).arg("--out").arg(dir.path()).status().unwrap().code(), Some(1));
    let st = bin()
        .args(["run", "--scenario"])
        .arg(scenarios_dir().join("kronecker_point.scn"))
        .args(["--backend-override", "sphere"])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(1));
    // Representations cannot be asked for metric derivatives.
    let mut scn = presets::a2_generic_12();
    scn.requests = vec![quiver_wp::scenario::Request::Curvature];
    let p = dir.path().join("rep.scn");
    std::fs::write(&p, scn.to_canonical()).unwrap();
    assert_eq!(bin().args(["run", "--scenario"]).arg(&p).arg("--out").arg(dir.path()).status().unwrap().code(), Some(1));
}

#[test]
fn report_has_provenance_and_csv_tables() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenarios_dir().join("kronecker_point.scn");
    let (code, report) = run_file(&path, dir.path(), 11, None, true);
    assert_eq!(code, 0);
    let report = report.unwrap();
    let digest: String = Sha256::digest(std::fs::read(&path).unwrap()).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(report.provenance.input_sha256, digest);
    assert_eq!(report.provenance.seed, 11);
    for name in ["G", "dG_formula", "dG_fd", "R_tf", "R_fd"] {
        let csv = std::fs::read_to_string(dir.path().join(format!("{name}.csv"))).unwrap();
        assert!(csv.lines().next().unwrap().ends_with("re,im"), "{name}");
    }
    // The Fubini–Study value of the Kronecker family at its normal center.
    let r = std::fs::read_to_string(dir.path().join("R_tf.csv")).unwrap();
    let re: f64 = r.lines().nth(1).unwrap().split(',').nth(4).unwrap().parse().unwrap();
    assert!((re - 2.0).abs() < 1e-6, "{re}");
}

#[test]
fn run_is_deterministic_apart_from_timing() {
    let scn = presets::three_arrow_point();
    let text = scn.to_canonical();
    let a = run_scenario(&scn, &text, 3);
    let b = run_scenario(&scn, &text, 3);
    assert_eq!(a.exit_code, 0, "{:?}", a.failure);
    assert_eq!(a.numeric_json(), b.numeric_json());
}

#[test]
fn backend_override_moves_family_to_torus() {
    let dir = tempfile::tempdir().unwrap();
    let mut scn = presets::kronecker_point();
    scn.requests = vec![quiver_wp::scenario::Request::Solve, quiver_wp::scenario::Request::Deform];
    let p = dir.path().join("k.scn");
    std::fs::write(&p, scn.to_canonical()).unwrap();
    let (code, report) = run_file(&p, dir.path(), 0, Some("torus:3"), false);
    assert_eq!(code, 0);
    let report = report.unwrap();
    let hd = &report.blocks[1].values["hyperdims"];
    assert_eq!(hd["exact"], false);
    assert_eq!(hd["h0"], 1);
}

#[test]
fn check_suite_text_is_stable_and_unknown_suite_fails() {
    let opts = CheckOptions { modes: 3, crosscheck_modes: 4 };
    let a = run_check("adjointness", 5, &opts).unwrap();
    let b = run_check("adjointness", 5, &opts).unwrap();
    assert!(a.passed());
    assert_eq!(a.to_text(), b.to_text());
    assert!(run_check("everything", 5, &opts).is_err());
    let out = bin().args(["check", "--suite", "hodge", "--modes", "3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS") || l.starts_with("seed=")));
}
