use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn aniso(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aniso"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = aniso(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulated anisotropic data written through the CLI; returns the CSV path.
fn simulated(dir: &Path, n: usize) -> PathBuf {
    let json = dir.join("sim.json");
    let n = n.to_string();
    ok(&["--seed", "3", "--output", path(&json), "simulate", "--n", &n, "--lambda1", "0.1", "--lambda2", "0.5"]);
    dir.join("sim.csv")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_writes_data_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulated(dir.path(), 40);
    let text = fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().next(), Some("x,y,value"));
    assert_eq!(text.lines().count(), 41);
    let rec = read_json(&dir.path().join("sim.json"));
    assert_eq!(rec["kind"], "sample");
    assert_eq!(rec["sample"]["n"], 40);
}

#[test]
fn parametric_record_and_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), 30);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "--seed",
            "11",
            "--output",
            path(&out),
            "test-parametric",
            "--data",
            path(&data),
            "--preprocess",
            "standardize",
            "--b",
            "20",
        ]);
        out
    };
    let a = run("a.json");
    let b = run("b.json");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read(a.with_extension("csv")).unwrap(), fs::read(b.with_extension("csv")).unwrap());

    let rec = read_json(&a);
    let result = &rec["result"];
    assert_eq!(rec["command"], "test-parametric");
    assert_eq!(result["B"], 20);
    assert_eq!(result["phi_resampled"].as_array().unwrap().len(), 20);
    let p = result["p_value"].as_f64().unwrap();
    assert_eq!((p * 20.0).round() / 20.0, p);
    assert_eq!(result["provenance"]["seed"], 11);
    assert!(rec["preprocessing"].as_array().unwrap().len() >= 2);
    assert_eq!(rec["config"]["seed"], 11);
    assert_eq!(fs::read_to_string(a.with_extension("csv")).unwrap().lines().count(), 21);
}

#[test]
fn rotational_reruns_are_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), 30);
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        ok(&[
            "--seed",
            "5",
            "--threads",
            threads,
            "--output",
            path(&out),
            "test-rotational",
            "--data",
            path(&data),
            "--b",
            "15",
            "--alpha",
            "pi/36",
        ]);
        fs::read(out).unwrap()
    };
    let a = run("a.json", "1");
    assert_eq!(a, run("b.json", "1"));
    assert_eq!(a, run("c.json", "3"));
    let rec: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(rec["result"]["algorithm"], "rotational_sampling");
    assert_eq!(rec["result"]["phi_resampled"].as_array().unwrap().len(), 15);
}

/// The echoed config, written back as a config file, reruns the same test.
#[test]
fn echoed_config_reproduces_result() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), 25);
    let first = dir.path().join("first.json");
    ok(&[
        "--seed",
        "9",
        "--output",
        path(&first),
        "test-rotational",
        "--data",
        path(&data),
        "--preprocess",
        "standardize,unit-coords",
        "--b",
        "5",
        "--eta",
        "pi/8",
        "--pair-cap",
        "100",
    ]);
    let mut echo = read_json(&first)["config"].as_object().unwrap().clone();
    let command = echo.remove("command").unwrap();
    let seed = echo.remove("seed").unwrap();
    echo.retain(|_, v| !v.is_null() && v.as_array().is_none_or(|a| !a.is_empty()));
    let mut table = toml::Table::new();
    table.insert("seed".into(), toml::Value::try_from(seed).unwrap());
    table.insert(command.as_str().unwrap().into(), toml::Value::try_from(echo).unwrap());
    let cfg = dir.path().join("echo.toml");
    fs::write(&cfg, toml::to_string(&table).unwrap()).unwrap();

    let second = dir.path().join("second.json");
    ok(&["--config", path(&cfg), "--output", path(&second), command.as_str().unwrap()]);
    assert_eq!(fs::read(first).unwrap(), fs::read(second).unwrap());
}

#[test]
fn variogram_and_csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), 40);
    let out = dir.path().join("v.csv");
    ok(&["--format", "csv", "--output", path(&out), "variogram", "--data", path(&data), "--bins", "4", "--directions", "0,pi/2"]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("direction,distance_lo,distance_hi,gamma,pair_count"));
    assert_eq!(text.lines().count(), 9);
    assert!(!out.with_extension("json").exists());
}

#[test]
fn bench_grid_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid.json");
    ok(&[
        "--output",
        path(&out),
        "bench-grid",
        "--sizes",
        "15",
        "--lambda2",
        "1,3",
        "--repetitions",
        "2",
        "--b",
        "3",
        "--random-starts",
        "0",
    ]);
    let rec = read_json(&out);
    let rows = rec["table"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r["repetitions"] == 2 && r["p_values"].as_array().unwrap().len() == 2));
    assert_eq!(fs::read_to_string(out.with_extension("csv")).unwrap().lines().count(), 5);

    let empty = dir.path().join("empty.json");
    ok(&["--output", path(&empty), "bench-grid", "--repetitions", "0"]);
    assert!(read_json(&empty)["table"]["rows"].as_array().unwrap().is_empty());
}

#[test]
fn ingest_reports_preprocessing() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("wells.txt");
    fs::write(&data, "east north depth\n0 0 10\n1 0 12\n0 1 11\n1 1 40\n").unwrap();
    let out = dir.path().join("ingest.json");
    ok(&[
        "--output",
        path(&out),
        "ingest",
        "--data",
        path(&data),
        "--x-col",
        "east",
        "--y-col",
        "north",
        "--value-col",
        "depth",
        "--preprocess",
        "drop-single-outlier,unit-coords",
    ]);
    let rec = read_json(&out);
    assert_eq!(rec["sample"]["n"], 3);
    let steps: Vec<&str> = rec["sample"]["preprocessing"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["step"].as_str().unwrap())
        .collect();
    assert_eq!(steps, ["ingest", "drop_outliers", "standardize_coords"]);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), 25);
    let out = dir.path().join("cfg.json");
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "seed = 4\noutput = {:?}\n\n[test-parametric]\ndata = {:?}\nb = 6\n",
            path(&out),
            path(&data)
        ),
    )
    .unwrap();
    ok(&["--config", path(&cfg), "test-parametric"]);
    let rec = read_json(&out);
    assert_eq!(rec["result"]["B"], 6);
    assert_eq!(rec["config"]["seed"], 4);

    ok(&["--config", path(&cfg), "--seed", "8", "test-parametric", "--b", "4"]);
    let rec = read_json(&out);
    assert_eq!(rec["result"]["B"], 4);
    assert_eq!(rec["config"]["seed"], 8);
}

fn error_of(out: &Output) -> Value {
    let line = String::from_utf8_lossy(&out.stderr)
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .expect("JSON error record on stderr")
        .to_string();
    serde_json::from_str(&line).unwrap()
}

#[test]
fn failures_emit_error_records() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = aniso(&["test-parametric", "--data", path(&missing)]);
    assert!(!out.status.success());
    assert!(error_of(&out)["error"]["kind"].is_string());

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x,y,value\n0,0,1\n1,0,abc\n0,1,2\n").unwrap();
    let out = aniso(&["ingest", "--data", path(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    let msg = error_of(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains('3'), "{msg}");

    let out = aniso(&["test-rotational", "--data", path(&bad), "--alpha", "pi/2"]);
    assert!(!out.status.success());

    let out = aniso(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"]["kind"], "usage");

    let out = aniso(&["--help"]);
    assert!(out.status.success());
    let help = String::from_utf8_lossy(&out.stdout);
    for sub in ["simulate", "test-parametric", "test-rotational", "variogram", "bench-grid", "ingest"] {
        assert!(help.contains(sub), "help lacks {sub}");
    }
}
