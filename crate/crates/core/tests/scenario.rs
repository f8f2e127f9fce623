//! Scenario files, reports and their on-disk forms.

mod common;

use std::fs;

use common::{load_fixture, scenario, Dc, User};
use dcsim::error::{RunError, ScenarioError};
use dcsim::scenario::report::cloudlets_csv;
use dcsim::scenario::{emit_reports, load_scenario, profile_instantiation, run_scenario, Format, ScenarioSpec};
use proptest::prelude::*;

#[test]
fn space_shared_fixture_matches_its_description() {
    let spec = load_fixture("spaceshared_10k.toml");
    assert_eq!(spec.datacenters.len(), 1);
    let d = &spec.datacenters[0];
    assert_eq!((d.host_count, d.cores_per_host, d.mips_per_core, d.ram_mb, d.storage_mb), (10_000, 1, 1000.0, 1024, 2 * 1024 * 1024));
    assert_eq!(spec.brokers[0].cloudlets.schedule.len(), 10);
}

#[test]
fn federation_fixture_matches_its_description() {
    let spec = load_fixture("federation3.toml");
    assert_eq!(spec.datacenters.len(), 3);
    assert!(spec.datacenters.iter().all(|d| d.host_count == 50));
    let b = &spec.brokers[0];
    assert_eq!((b.vms.count, b.vms.ram_mb, b.cloudlets.length_mi), (25, 256, 1.8e6));
}

#[test]
fn fixtures_round_trip_through_text() {
    for name in ["spaceshared_10k.toml", "timeshared_10k.toml", "federation3.toml"] {
        let spec = load_fixture(name);
        assert_eq!(ScenarioSpec::from_toml(&spec.to_toml()).unwrap(), spec, "{name}");
    }
}

proptest! {
    #[test]
    fn generated_scenarios_round_trip(hosts in 1u32..5, vms in 1u32..4, len in 1u32..10_000, binds in prop::collection::vec(0u32..3, 0..6), busy in 0u32..2) {
        let binds: Vec<u32> = binds.into_iter().map(|b| b % vms).collect();
        let spec = scenario(
            &[Dc::new("x", "time-shared").hosts(hosts, &[1000.0, 750.0], 4096).queueing(true).busy(busy.min(hosts))],
            &[User::new("u", vms, 1, 500.0, 512, "space-shared").tasks(len as f64, &binds)],
            None,
        );
        prop_assert_eq!(ScenarioSpec::from_toml(&spec.to_toml()).unwrap(), spec);
    }
}

#[test]
fn empty_datacenter_list_is_rejected() {
    let err = ScenarioSpec::from_toml("datacenters = []\n").unwrap_err();
    assert!(matches!(err, ScenarioError::Invalid { ref path, .. } if path == "datacenters"), "{err}");
}

#[test]
fn binding_to_an_unknown_vm_names_the_field() {
    let mut spec = scenario(&[Dc::new("x", "space-shared").hosts(1, &[1000.0], 1024)], &[User::new("u", 2, 1, 1000.0, 512, "space-shared").tasks(10.0, &[0, 1])], None);
    spec.brokers[0].cloudlets.bindings[1] = 5;
    let err = spec.validate().unwrap_err();
    assert!(matches!(err, ScenarioError::Invalid { ref path, .. } if path == "brokers[0].cloudlets.bindings[1]"), "{err}");
}

#[test]
fn syntax_errors_carry_a_line() {
    let src = "[[datacenters]]\nname = \"x\"\nhost_count = \"many\"\n";
    match ScenarioSpec::from_toml(src).unwrap_err() {
        ScenarioError::Parse { line, .. } => assert_eq!(line, 3),
        other => panic!("{other}"),
    }
}

#[test]
fn unknown_fields_are_rejected() {
    let src = "[[datacenters]]\nname = \"x\"\nhost_count = 1\ncores_per_host = 1\nmips_per_core = 1.0\nram_mb = 1\nstorage_mb = 1\nhosts = 3\n";
    assert!(matches!(ScenarioSpec::from_toml(src), Err(ScenarioError::Parse { .. })));
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(load_scenario("/nonexistent/x.toml".as_ref()), Err(ScenarioError::Io { .. })));
}

#[test]
fn scenario_without_cloudlets_has_zero_makespan() {
    let spec = scenario(&[Dc::new("x", "space-shared").hosts(1, &[1000.0], 1024)], &[], None);
    let report = run_scenario(&spec).unwrap();
    assert!(report.rows.is_empty());
    assert_eq!(report.makespan_s, 0.0);
    assert_eq!(report.avg_turnaround_s, 0.0);
}

#[test]
fn same_spec_gives_byte_identical_rows() {
    let spec = load_fixture("timeshared_10k.toml");
    let a = cloudlets_csv(&run_scenario(&spec).unwrap());
    let b = cloudlets_csv(&run_scenario(&spec).unwrap());
    assert_eq!(a, b);
    let fed = load_fixture("federation3.toml");
    let a = run_scenario(&fed).unwrap();
    let b = run_scenario(&fed).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.migrations, b.migrations);
}

#[test]
fn emitted_summary_agrees_with_cloudlet_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = load_fixture("federation3.toml");
    spec.run.trace = true;
    let report = run_scenario(&spec).unwrap();
    let files = emit_reports(&report, dir.path(), &[Format::Csv, Format::Json]).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    for f in ["cloudlets.csv", "migrations.csv", "invoices.csv", "profile.csv", "summary.json", "trace.log"] {
        assert!(names.iter().any(|n| n == f), "{f} missing");
    }

    let csv = fs::read_to_string(dir.path().join("cloudlets.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("cloudlet_id,vm_id,submit,start,finish,cpu_time"));
    let turnarounds: Vec<f64> = lines
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            f[4] - f[2]
        })
        .collect();
    let mean = turnarounds.iter().sum::<f64>() / turnarounds.len() as f64;
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!((summary["avg_turnaround_s"].as_f64().unwrap() - mean).abs() < 1e-9);
    assert_eq!(summary["scenario"]["federation"]["sensor_period"].as_f64(), Some(10.0), "defaults are echoed");

    let heads = [
        ("migrations.csv", "time,vm_id,from_dc,to_dc,cloudlets_moved"),
        ("invoices.csv", "owner,kind,quantity,rate,amount"),
        ("profile.csv", "host_count,build_seconds,peak_resident_bytes,method"),
    ];
    for (f, head) in heads {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().next(), Some(head), "{f}");
    }
    let trace = fs::read_to_string(dir.path().join("trace.log")).unwrap();
    assert_eq!(trace.lines().count() as u64, report.events_delivered);
}

#[test]
fn unwritable_directory_fails_without_touching_existing_files() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_scenario(&load_fixture("federation3.toml")).unwrap();
    emit_reports(&report, dir.path(), &[Format::Csv]).unwrap();
    let before = fs::read(dir.path().join("cloudlets.csv")).unwrap();

    // A plain file where the directory should be.
    let blocked = dir.path().join("blocked");
    fs::write(&blocked, b"x").unwrap();
    let err = emit_reports(&report, &blocked.join("out"), &[Format::Csv]).unwrap_err();
    assert!(matches!(err, RunError::Io { .. }));
    assert_eq!(fs::read(&blocked).unwrap(), b"x");
    assert_eq!(fs::read(dir.path().join("cloudlets.csv")).unwrap(), before);
    let stray: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(stray.len(), 5, "{stray:?}");
}

#[test]
fn tampered_report_fails_verification() {
    let mut report = run_scenario(&load_fixture("federation3.toml")).unwrap();
    report.avg_turnaround_s += 1.0;
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(emit_reports(&report, dir.path(), &[Format::Json]), Err(RunError::Report(_))));
}

#[test]
fn profile_rows_follow_the_requested_counts() {
    let rows = profile_instantiation(&[10, 100, 1000]).unwrap();
    assert_eq!(rows.iter().map(|r| r.host_count).collect::<Vec<_>>(), vec![10, 100, 1000]);
    assert!(rows.iter().all(|r| r.error.is_none()));
    assert!(profile_instantiation(&[100, 10]).is_err());
}

#[test]
fn space_shared_first_fit_uses_lowest_hosts() {
    let mut b = dcsim::scenario::build(&load_fixture("spaceshared_10k.toml")).unwrap();
    b.sim.start().unwrap();
    // Run until every VM exists, then look at where they went.
    while b.sim.clock().secs() == 0.0 && b.sim.step().unwrap().is_some() {}
    let occupied: Vec<u32> = b.datacenter(0).hosts().iter().filter(|h| !h.residents().is_empty()).map(|h| h.id.0).collect();
    assert_eq!(occupied, (0..50).collect::<Vec<_>>());
}
