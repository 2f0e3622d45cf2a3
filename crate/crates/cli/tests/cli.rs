use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn wncs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wncs"))
        .args(args)
        .env_remove("WNCS_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn scenario() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios/paper_default.toml")
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn solve_then_validate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sol = dir.path().join("sol.json");
    let trace = dir.path().join("trace.csv");
    let out = wncs(&[
        "solve",
        &scenario(),
        "--scheme",
        "resource_only",
        "--seed",
        "3",
        "--out",
        sol.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(fs::read_to_string(&trace).unwrap().starts_with("outer,inner,block,period_s,max_violation"));

    let out = wncs(&["validate", sol.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.lines().count() >= 6);
    assert!(!text.contains("FAIL"), "{text}");

    // A tampered period breaks the stability and slot checks.
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&sol).unwrap()).unwrap();
    json["solution"]["time"]["period"] = serde_json::json!(10.0);
    fs::write(&sol, json.to_string()).unwrap();
    let out = wncs(&["validate", sol.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn sweep_writes_tables_and_export_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = wncs(&[
        "sweep",
        "cpu-freq",
        "1e9,2e9",
        "--scenario",
        &scenario(),
        "--schemes",
        "resource_only",
        "--seed-list",
        "1,2",
        "--horizon",
        "5",
        "--trials",
        "1",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["results.csv", "latency.csv", "control_cost.csv", "summary.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let results = out_dir.join("results.csv");
    let csv = fs::read_to_string(&results).unwrap();
    assert_eq!(csv.lines().count(), 2 + 4);

    let out = wncs(&["export", results.to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 4);
    assert_eq!(json["sweep_axis"], "cpu_freq");

    let out = wncs(&["export", results.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(stdout(&out), csv);
}

#[test]
fn run_honours_the_output_directory_variable() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(
        &spec,
        format!("scenario = {:?}\nschemes = [\"resource_only\"]\nseeds = [5]\n[control]\nhorizon = 3\ntrials = 1\n", scenario()),
    )
    .unwrap();
    let target = dir.path().join("from_env");
    let out = Command::new(env!("CARGO_BIN_EXE_wncs"))
        .args(["run", spec.to_str().unwrap(), "--save-solutions"])
        .env("WNCS_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(target.join("results.csv").exists());
    assert!(target.join("solutions/resource_only_5.json").exists());
}

#[test]
fn bad_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, "scenario = \"x.toml\"\nseeds = []\n").unwrap();
    assert_eq!(wncs(&["run", spec.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(wncs(&["validate", "/nonexistent/solution.json"]).status.code(), Some(2));
    let out = wncs(&["sweep", "downlink-power", "3,2", "--scenario", &scenario()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("strictly increasing"));
    // Unknown schemes are rejected by the argument parser.
    assert_ne!(wncs(&["solve", &scenario(), "--scheme", "tdma"]).status.code(), Some(0));
}
