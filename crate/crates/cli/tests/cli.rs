use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hid(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hid"))
        .args(args)
        .arg("--output")
        .arg(out)
        .env_remove("HID_OUTPUT_DIR")
        .output()
        .expect("hid runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// CSV text with the named column blanked.
fn without_column(text: &str, column: &str) -> String {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == column).unwrap();
    lines
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f[k] = "";
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn balance_without_disturbance_holds_still() {
    let dir = tempfile::tempdir().unwrap();
    let out = hid(&["run-balance", "--set", "sim.duration=0.5"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&dir.path().join("balance_summary.json"));
    assert_eq!(summary["passed"], true);
    assert!(summary["episode"]["com_rmse"].as_f64().unwrap() < 1e-6);
    assert_eq!(summary["episode"]["cycles"], 500);
    assert!(dir.path().join("balance.csv").exists());
    let config = json(&dir.path().join("balance_config.json"));
    assert_eq!(config["sim"]["duration"], 0.5);
}

#[test]
fn reruns_match_except_timing() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "run-balance",
        "--set",
        "sim.duration=0.3",
        "--set",
        r#"disturbances=[{"kind":"impulse","frame":"pelvis_center","impulse":[2,0,0,0,0,0],"start":0.1,"duration":0.05}]"#,
        "--set",
        "sim.mass_perturbation=0.05",
        "--set",
        "seed=7",
    ];
    for dir in [&a, &b] {
        assert_eq!(hid(&args, dir.path()).status.code(), Some(0));
    }
    let read = |d: &tempfile::TempDir| std::fs::read_to_string(d.path().join("balance.csv")).unwrap();
    assert_eq!(without_column(&read(&a), "solve_time_us"), without_column(&read(&b), "solve_time_us"));
    let strip = |d: &tempfile::TempDir| {
        let mut v = json(&d.path().join("balance_summary.json"));
        v["episode"].as_object_mut().unwrap().remove("timing");
        v
    };
    assert_eq!(strip(&a), strip(&b));
    let config = |d: &tempfile::TempDir| {
        let mut v = json(&d.path().join("balance_config.json"));
        v.as_object_mut().unwrap().remove("output_dir");
        v
    };
    assert_eq!(config(&a), config(&b));
}

#[test]
fn audit_flags_a_planted_cop_violation() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hid(&["run-balance", "--set", "sim.duration=0.2"], dir.path()).status.code(), Some(0));
    let log = dir.path().join("balance.csv");
    let clean = hid(&["audit", "--log", log.to_str().unwrap()], dir.path());
    assert_eq!(clean.status.code(), Some(0), "{}", String::from_utf8_lossy(&clean.stdout));

    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let k = header.iter().position(|h| *h == "l_sole_cmd_my").unwrap();
    let planted = 101;
    let mut fields: Vec<String> = lines[planted].split(',').map(String::from).collect();
    fields[k] = "-1000".into();
    lines[planted] = fields.join(",");
    let bad = dir.path().join("planted.csv");
    std::fs::write(&bad, lines.join("\n") + "\n").unwrap();

    let out = hid(&["audit", "--log", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let audit = json(&dir.path().join("audit.json"));
    assert_eq!(audit["flagged_cycles"], serde_json::json!([planted - 1]));
    assert_eq!(audit["flags"][0]["kind"], "commanded_cop");
}

#[test]
fn bench_reports_the_variable_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let out = hid(
        &["bench-reduction", "--set", "bench.cycles=20", "--set", "criteria.max_worst_ratio=10"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = json(&dir.path().join("bench_reduction_summary.json"));
    assert_eq!(s["report"]["full_variables"], 68);
    assert_eq!(s["report"]["reduced_variables"], 43);
    assert_eq!(s["report"]["full_equality_rows"].as_u64().unwrap() - s["report"]["reduced_equality_rows"].as_u64().unwrap(), 25);
    assert!(s["report"]["max_torque_difference"].as_f64().unwrap() < 1e-6);
    let csv = std::fs::read_to_string(dir.path().join("bench_reduction.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "cycle,support,full_us,reduced_us,torque_difference");
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn failed_criteria_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = hid(
        &["run-tracking", "--set", "sim.duration=0.5", "--set", "criteria.max_com_rmse=0"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&dir.path().join("tracking_summary.json"))["passed"], false);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["run-balance", "--set", "unknown_key=1"],
        vec!["run-balance", "--set", "no_equals_sign"],
        vec!["run-tracking", "--set", "controller=balance"],
        vec!["run-balance", "--set", "model=builtin:nothing"],
        vec!["run-balance", "--set", "sim.dt=0"],
        vec!["run-single-support", "--set", "single_support.swing=3"],
    ] {
        let out = hid(&args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
    }
    let missing = hid(&["run-balance", "--config", "/nonexistent/config.json"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn defaults_are_reported_and_config_files_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, r#"{"sim": {"duration": 0.1}, "controller": "balance"}"#).unwrap();
    let out = hid(&["run-balance", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("using defaults for"));
    assert!(stderr.contains("controller_config"));
    assert!(!stderr.contains(" sim,"));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_hid"))
        .args(["run-balance", "--set", "sim.duration=0.05"])
        .env("HID_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    assert!(dir.path().join("balance_summary.json").exists());
}

#[test]
fn single_support_reaches_all_phases() {
    let dir = tempfile::tempdir().unwrap();
    let out = hid(&["run-single-support", "--set", "sim.duration=2.3"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let s = json(&dir.path().join("single_support_summary.json"));
    let phases: Vec<&str> = s["episode"]["phases"].as_array().unwrap().iter().map(|p| p["phase"].as_str().unwrap()).collect();
    assert_eq!(phases, ["double_support", "unloading", "single_support"]);
}
