use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dbarlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbarlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

const SMALL_SOLVE: &str = r#"
experiment = "solve"
seed = 4

[grid]
n = 1
R = 4.0
N = 48

[weight]
kind = "gaussian"
params = [1.0]

[data]
kind = "random"
radius = 1.0
"#;

#[test]
fn list_presets_names_all_three() {
    let out = dbarlab(&["list-presets"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["thm21_decay", "thm22_avoid", "thm31_approx"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn show_preset_prints_the_config() {
    let out = dbarlab(&["show-preset", "thm21_decay"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("experiment = \"decay\""));
    assert_eq!(dbarlab(&["show-preset", "thm99"]).status.code(), Some(2));
}

#[test]
fn missing_grid_points_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, SMALL_SOLVE.replace("N = 48\n", "")).unwrap();
    let out = dbarlab(&["run", path.to_str().unwrap(), "--out-dir", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("grid.N"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unreadable_config_is_a_config_error() {
    let out = dbarlab(&["run", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("solve.toml");
    fs::write(&path, SMALL_SOLVE).unwrap();
    let out_dir = dir.path().join("out");
    let out = dbarlab(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--seed",
        "9",
        "--threads",
        "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = report(&out_dir);
    assert_eq!(doc["config"]["seed"], 9);
    assert_eq!(doc["config"]["threads"], 1);
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["passed"], true);
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("solve: passed"));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("solve.toml");
    fs::write(&path, SMALL_SOLVE).unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = dbarlab(&["run", path.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap(), "--threads", "2"]);
        assert!(out.status.success());
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    for file in ["report.json", "solution.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn invariant_failure_exits_with_four() {
    // a single k gives too few tails for the decay fit
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("decay.toml");
    let text = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/decay.toml"))
        .unwrap()
        .replace("N = 128", "N = 48")
        .replace("ks = [0, 2, 4, 6, 8, 10, 12]", "ks = [0, 2]");
    fs::write(&path, text).unwrap();
    let out_dir = dir.path().join("out");
    let out = dbarlab(&["run", path.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let doc = report(&out_dir);
    assert_eq!(doc["passed"], false);
    assert!(doc["error"].as_str().unwrap().contains("degenerate fit"));
}

#[test]
fn decay_preset_writes_seven_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dbarlab(&["run", "--preset", "thm21_decay", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = fs::read_to_string(dir.path().join("decay.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,tail,ratio,bound_prediction"));
    assert_eq!(lines.count(), 7);
    let doc = report(dir.path());
    assert!(doc["report"]["fitted_slope"].as_f64().unwrap() < 0.0);
    assert!(doc["theorem"].as_str().unwrap().contains("weight bumping"));
}
