//! End-to-end invocations of the `dcsim` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn dcsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcsim")).args(args).output().expect("spawn dcsim")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn run_writes_all_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fed");
    let o = dcsim(&["run", fixture("federation3.toml").to_str().unwrap(), "--out", out.to_str().unwrap(), "--trace"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["cloudlets.csv", "migrations.csv", "invoices.csv", "profile.csv", "summary.json", "trace.log"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("25 cloudlets"), "{stdout}");
}

#[test]
fn json_only_run_skips_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcsim(&["run", fixture("federation3.toml").to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--format", "json"]);
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("summary.json").is_file());
    assert!(!dir.path().join("cloudlets.csv").exists());
}

#[test]
fn parallel_runs_match_sequential_runs() {
    let seq = tempfile::tempdir().unwrap();
    let par = tempfile::tempdir().unwrap();
    let a = fixture("federation3.toml");
    let b = fixture("spaceshared_10k.toml");
    let args = |dir: &Path, jobs: &str| {
        let o = dcsim(&["run", a.to_str().unwrap(), b.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--jobs", jobs]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    args(seq.path(), "1");
    args(par.path(), "2");
    for stem in ["federation3", "spaceshared_10k"] {
        let read = |d: &Path| fs::read(d.join(stem).join("cloudlets.csv")).unwrap();
        assert_eq!(read(seq.path()), read(par.path()), "{stem}");
    }
}

#[test]
fn validate_accepts_fixtures() {
    for name in ["spaceshared_10k.toml", "timeshared_10k.toml", "federation3.toml"] {
        let o = dcsim(&["validate", fixture(name).to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn invalid_scenario_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "datacenters = []\n").unwrap();
    let out = dir.path().join("o");
    let attempts = [
        vec!["validate", bad.to_str().unwrap()],
        vec!["run", bad.to_str().unwrap(), "--out", out.to_str().unwrap()],
    ];
    for args in attempts {
        let o = dcsim(&args);
        assert_eq!(code(&o), 1, "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("datacenters"));
    }
    assert!(!out.exists());
    let o = dcsim(&["validate", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn unwritable_output_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let blocked = dir.path().join("file");
    fs::write(&blocked, b"x").unwrap();
    let o = dcsim(&["run", fixture("federation3.toml").to_str().unwrap(), "--out", blocked.join("out").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert_eq!(fs::read(&blocked).unwrap(), b"x");
}

#[test]
fn profile_writes_one_row_per_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcsim(&["profile", "--hosts", "10,100,1000", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("profile.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("host_count,build_seconds,peak_resident_bytes,method"));
    let counts: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(counts, ["10", "100", "1000"]);
}

#[test]
fn profile_rejects_unordered_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcsim(&["profile", "--hosts", "100,10", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}
