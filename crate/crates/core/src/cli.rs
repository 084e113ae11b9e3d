//! Command implementations behind the `por` binary.
//!
//! Exit codes: 0 success, 1 invariant violation or golden mismatch, 2 usage,
//! I/O or scenario errors.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::properties;
use crate::scenario::Scenario;
use crate::sim;
use crate::timeline;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAIL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

pub fn load_scenario(path: &Path) -> Result<Scenario, String> {
    let src = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Scenario::parse(&src).map_err(|e| format!("{}: {e}", path.display()))
}

/// Run a scenario. The trace goes to `out` (stdout when absent), the ledger
/// summary to stdout. An `out` path ending in `.timeline` receives the
/// rendered timeline instead of the raw trace.
pub fn cmd_run(
    scenario: &Path,
    out: Option<&Path>,
    horizon_ms: Option<u64>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> u8 {
    let mut sc = match load_scenario(scenario) {
        Ok(sc) => sc,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Some(h) = horizon_ms {
        sc.horizon_ms = h;
    }
    let run = match sim::run(&sc) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let text = match out {
        Some(p) if p.extension().is_some_and(|x| x == "timeline") => {
            timeline::render(&run.trace, &sc.render)
        }
        _ => run.trace.to_text(),
    };
    match out {
        Some(p) => {
            if let Err(e) = fs::write(p, &text) {
                let _ = writeln!(stderr, "error: {}: {e}", p.display());
                return EXIT_USAGE;
            }
        }
        None => {
            let _ = stdout.write_all(text.as_bytes());
        }
    }
    let _ = stdout.write_all(run.summary().as_bytes());
    if run.violations.is_empty() {
        EXIT_OK
    } else {
        for v in &run.violations {
            let _ = writeln!(stderr, "violation: {v}");
        }
        EXIT_FAIL
    }
}

/// Rendering compared by `check`: the raw trace for `*.trace` goldens, the
/// timeline table otherwise.
pub fn render_for_golden(sc: &Scenario, golden: &Path) -> Result<String, String> {
    let run = sim::run(sc).map_err(|e| e.to_string())?;
    if golden.extension().is_some_and(|x| x == "trace") {
        Ok(run.trace.to_text())
    } else {
        Ok(timeline::render(&run.trace, &sc.render))
    }
}

pub fn cmd_check(
    scenario: &Path,
    golden: &Path,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> u8 {
    let sc = match load_scenario(scenario) {
        Ok(sc) => sc,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let expected = match fs::read_to_string(golden) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}: {e}", golden.display());
            return EXIT_USAGE;
        }
    };
    let actual = match render_for_golden(&sc, golden) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_USAGE;
        }
    };
    match timeline::first_difference(&expected, &actual) {
        None => {
            let _ = writeln!(stdout, "match: {}", golden.display());
            EXIT_OK
        }
        Some((line, want, got)) => {
            let _ = writeln!(
                stderr,
                "mismatch at line {line}\n  golden: {want}\n  actual: {got}"
            );
            EXIT_FAIL
        }
    }
}

pub fn cmd_properties(
    seed: u64,
    iterations: u64,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> u8 {
    if iterations == 0 {
        let _ = writeln!(stderr, "error: --iterations must be at least 1");
        return EXIT_USAGE;
    }
    let report = properties::run_suites(seed, iterations);
    for line in report.lines() {
        let _ = writeln!(stdout, "{line}");
    }
    match report.first_failure() {
        None => EXIT_OK,
        Some(f) => {
            let _ = writeln!(
                stderr,
                "counterexample ({}, iteration {}): {}\n{}",
                f.suite, f.iteration, f.detail, f.counterexample
            );
            EXIT_FAIL
        }
    }
}
