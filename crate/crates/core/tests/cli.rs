use std::fs;
use std::path::{Path, PathBuf};

use por::cli::{self, EXIT_FAIL, EXIT_OK, EXIT_USAGE};

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn goldens() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn run(scenario: &Path, out: Option<&Path>, horizon: Option<u64>) -> (u8, String, String) {
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let code = cli::cmd_run(scenario, out, horizon, &mut o, &mut e);
    (
        code,
        String::from_utf8(o).unwrap(),
        String::from_utf8(e).unwrap(),
    )
}

fn check(scenario: &Path, golden: &Path) -> (u8, String, String) {
    let (mut o, mut e) = (Vec::new(), Vec::new());
    let code = cli::cmd_check(scenario, golden, &mut o, &mut e);
    (
        code,
        String::from_utf8(o).unwrap(),
        String::from_utf8(e).unwrap(),
    )
}

#[test]
fn every_golden_matches() {
    let mut seen = 0;
    for entry in fs::read_dir(goldens()).unwrap() {
        let golden = entry.unwrap().path();
        let stem = golden.file_stem().unwrap().to_str().unwrap().to_string();
        let (code, _, err) = check(&scenarios().join(format!("{stem}.por")), &golden);
        assert_eq!(code, EXIT_OK, "{}: {err}", golden.display());
        seen += 1;
    }
    assert!(seen >= 10);
}

#[test]
fn run_writes_trace_and_timeline() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("happy.trace");
    let table = dir.path().join("happy.timeline");
    let (code, summary, _) = run(&scenarios().join("happy.por"), Some(&trace), None);
    assert_eq!(code, EXIT_OK);
    assert!(summary.contains("end_time\t"));
    assert_eq!(
        fs::read_to_string(&trace).unwrap(),
        fs::read_to_string(goldens().join("happy.trace")).unwrap()
    );
    assert_eq!(
        run(&scenarios().join("happy.por"), Some(&table), None).0,
        EXIT_OK
    );
    assert_eq!(
        fs::read_to_string(&table).unwrap(),
        fs::read_to_string(goldens().join("happy.timeline")).unwrap()
    );
}

#[test]
fn zero_horizon_runs_nothing() {
    let (code, out, _) = run(&scenarios().join("happy.por"), None, Some(0));
    assert_eq!(code, EXIT_OK);
    assert!(out.starts_with("end_time\t0\n"), "{out}");
}

#[test]
fn malformed_scenario_is_rejected_with_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.por");
    fs::write(
        &bad,
        "name = \"x\"\nhorizon_ms = 10\n\n[[node]]\nid = \"A\"\nstake = \"lots\"\n",
    )
    .unwrap();
    let (code, _, err) = run(&bad, None, None);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("line"), "{err}");
    let (code, _, _) = run(&dir.path().join("absent.por"), None, None);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn missing_golden_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = check(
        &scenarios().join("happy.por"),
        &dir.path().join("none.timeline"),
    );
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("none.timeline"));
}

#[test]
fn perturbed_sync_phase_reports_first_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let src = fs::read_to_string(scenarios().join("eve_wait_pay.por")).unwrap();
    // Alex-Alice syncs move 100ms later; the first no-payment row is the
    // first line to change.
    let shifted = src.replacen("sync_phase_ms = 500", "sync_phase_ms = 600", 1);
    assert_ne!(src, shifted);
    let path = dir.path().join("shifted.por");
    fs::write(&path, shifted).unwrap();
    let (code, _, err) = check(&path, &goldens().join("eve_wait_pay.timeline"));
    assert_eq!(code, EXIT_FAIL);
    assert!(err.starts_with("mismatch at line 5\n"), "{err}");
    assert!(err.contains("actual: 600 "), "{err}");
}

#[test]
fn properties_needs_iterations() {
    let (mut o, mut e) = (Vec::new(), Vec::new());
    assert_eq!(cli::cmd_properties(1, 0, &mut o, &mut e), EXIT_USAGE);
    let (mut o, mut e) = (Vec::new(), Vec::new());
    assert_eq!(cli::cmd_properties(9, 20, &mut o, &mut e), EXIT_OK);
    let report = String::from_utf8(o).unwrap();
    assert!(report.lines().all(|l| l.starts_with("PASS ")), "{report}");
    assert!(report.contains("center-resistance 20/20"));
}
