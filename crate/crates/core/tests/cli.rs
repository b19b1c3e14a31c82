use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ftsoc::interconnect::PERIPH_BASE;
use ftsoc::isa::{Assembler, Reg, R0};
use ftsoc::peripherals::{CTRL_RETVAL, CTRL_START};
use ftsoc::workload::{self, Workload};

fn ftsoc(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftsoc")).env("FTSOC_OUT", out).args(args).output().expect("spawn ftsoc")
}

#[test]
fn golden_writes_artifacts_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = ftsoc(dir.path(), &["run-golden", "--config", "cfg4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let g = dir.path().join("golden/cfg4");
    let trace = fs::read_to_string(g.join("trace.csv")).unwrap();
    assert_eq!(trace, include_str!("../data/golden_trace.csv"));
    assert!(fs::read_to_string(g.join("memory.txt")).unwrap().len() > 100);
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(g.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["uart"], workload::MESSAGE);
}

#[test]
fn failing_status_gives_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    // Start marker, then a return value carrying one error.
    let mut a = Assembler::new();
    a.li(Reg(1), PERIPH_BASE).addi(Reg(2), R0, 1).sw(Reg(2), CTRL_START as i32, Reg(1));
    a.li(Reg(3), workload::DONE | 1).sw(Reg(3), CTRL_RETVAL as i32, Reg(1)).halt();
    let wl = Workload { entry: 0, words: a.finish().unwrap() };
    let path = dir.path().join("bad.bin");
    wl.save(&path).unwrap();
    let o = ftsoc(dir.path(), &["--workload", path.to_str().unwrap(), "run-golden"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn corrupt_workload_is_rejected_before_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let mut bytes = workload::build().unwrap().to_bytes();
    bytes.truncate(bytes.len() - 3);
    fs::write(&path, bytes).unwrap();
    let o = ftsoc(dir.path(), &["--workload", path.to_str().unwrap(), "run-golden"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("workload"));
    assert!(!dir.path().join("golden").exists());

    let o = ftsoc(dir.path(), &["--workload", dir.path().join("missing.bin").to_str().unwrap(), "run-golden"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_workers_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = ftsoc(dir.path(), &["--workers", "0", "campaign", "--n", "5"]);
    assert!(!o.status.success());
}

#[test]
fn port_campaign_on_unprotected_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ftsoc(dir.path(), &["campaign", "--config", "cfg1", "--scenario", "port", "--n", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no targets"));
}

#[test]
fn campaign_from_plan_file_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.toml");
    fs::write(&plan, "config = \"cfg2\"\nscenario = \"set\"\nn = 60\nseed = 4\n").unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(ftsoc(&a, &["campaign", "--plan", plan.to_str().unwrap()]).status.success());
    assert!(ftsoc(&b, &["--workers", "2", "campaign", "--config", "cfg2", "--scenario", "set", "--n", "60", "--seed", "4"]).status.success());
    let csv = |d: &Path| fs::read_to_string(d.join("campaigns/cfg2/set/faults.csv")).unwrap();
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(csv(&a).lines().count(), 61);

    fs::write(&plan, "config = \"cfg2\"\nscenario = \"set\"\nn = 60\nseed = 4\nbogus = 1\n").unwrap();
    assert_eq!(ftsoc(&a, &["campaign", "--plan", plan.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn inject_one_prints_an_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let o = ftsoc(dir.path(), &["inject-one", "--config", "cfg3", "--scenario", "ff-excl-sram", "--index", "7"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["outcome"]["class"].is_string());
}

#[test]
fn study_is_resumable_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("study.toml");
    fs::write(&plan, "n = 40\nseed = 3\nconfigs = [\"cfg0\", \"cfg3\", \"tmrg\"]\nscenarios = [\"ff-all\", \"port\"]\n").unwrap();
    let a = dir.path().join("a");
    let o = ftsoc(&a, &["study", "--plan", plan.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("cfg0 port: not applicable"));

    let pareto = fs::read_to_string(a.join("report/pareto.csv")).unwrap();
    assert_eq!(pareto.lines().count(), 1 + 3 + 1);
    assert!(a.join("report/published_reference.json").exists());
    assert!(a.join("report/histogram_tmrg.json").exists());

    let again = ftsoc(&a, &["study", "--plan", plan.to_str().unwrap()]);
    let out = String::from_utf8_lossy(&again.stdout);
    assert_eq!(out.matches("skipping").count(), 4, "{out}");
    assert_eq!(fs::read_to_string(a.join("report/pareto.csv")).unwrap(), pareto);

    let b = dir.path().join("b");
    assert!(ftsoc(&b, &["--workers", "3", "study", "--plan", plan.to_str().unwrap()]).status.success());
    for f in ["campaigns/cfg3/ff-all/faults.csv", "campaigns/cfg3/port/faults.csv", "report/pareto.csv", "report/fractions.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn report_on_empty_directory_writes_headers() {
    let dir = tempfile::tempdir().unwrap();
    let o = ftsoc(dir.path(), &["report"]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("report/pareto.csv")).unwrap(), ftsoc::report::PARETO_HEADER);
    assert_eq!(fs::read_to_string(dir.path().join("report/area.csv")).unwrap().lines().count(), 7);
}
