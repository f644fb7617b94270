//! End-to-end runs of the `ellrisk` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn ellrisk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ellrisk"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

const ONE_OBSTACLE: &str = r#"{
  "robot": { "center": [0.95, 0.95, 0.0], "semi_axes": [0.18, 0.18, 0.22], "covariance": [0.05, 0.05, 0.02] },
  "obstacles": [ { "center": [0.0, 0.0, 0.0], "semi_axes": [0.6, 0.6, 1.2] } ],
  "epsilon": 0.09
}"#;

#[test]
fn prob_reports_every_obstacle() {
    let dir = TempDir::new().unwrap();
    let scene = write(&dir, "scene.json", ONE_OBSTACLE);
    let o = ellrisk(&["prob", &scene]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("# schema="));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 1);
    let p: f64 = rows[0][2].parse().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn empty_obstacle_list_succeeds() {
    let dir = TempDir::new().unwrap();
    let scene = write(
        &dir,
        "empty.json",
        r#"{"robot": {"center": [0, 0, 0], "semi_axes": [1, 1, 1], "covariance": [1, 1, 1]}, "obstacles": [], "epsilon": 0.1}"#,
    );
    let o = ellrisk(&["prob", &scene]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(csv_rows(&String::from_utf8(o.stdout).unwrap()).is_empty());
}

#[test]
fn malformed_field_names_its_path() {
    let dir = TempDir::new().unwrap();
    let scene = write(&dir, "bad.json", r#"{"robot": {"center": [0, 0, "x"]}}"#);
    let o = ellrisk(&["prob", &scene]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("robot.center[2]"), "{}", stderr(&o));
}

#[test]
fn inconsistent_dimensions_are_bad_input() {
    let dir = TempDir::new().unwrap();
    let scene = write(
        &dir,
        "dims.json",
        r#"{"robot": {"center": [0, 0], "semi_axes": [1, 1, 1], "covariance": [1, 1, 1]}, "obstacles": [], "epsilon": 0.1}"#,
    );
    let o = ellrisk(&["prob", &scene]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));
}

#[test]
fn epsilon_out_of_range_is_bad_input() {
    let dir = TempDir::new().unwrap();
    let scene = write(&dir, "scene.json", ONE_OBSTACLE);
    assert_eq!(ellrisk(&["prob", &scene, "--eps", "1.5"]).status.code(), Some(1));
}

/// Tiny variance across the offset and a huge one along the obstacle's
/// long axis: neither expansion resolves the form.
const UNRESOLVED: &str = r#"{
  "robot": { "center": [0.5, 0.5, 0.0], "semi_axes": [0.2, 0.2, 0.2], "covariance": [1e-6, 1e-6, 10.0] },
  "obstacles": [ { "center": [0.0, 0.0, 0.0], "semi_axes": [0.6, 0.6, 1.2] } ],
  "epsilon": 0.1
}"#;

#[test]
fn non_convergence_exits_two_unless_fallback() {
    let dir = TempDir::new().unwrap();
    let scene = write(&dir, "hard.json", UNRESOLVED);
    let o = ellrisk(&["prob", &scene]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("converge"));

    let o = ellrisk(&["prob", &scene, "--mc-fallback", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("seed 3"));
    let p: f64 = csv_rows(&String::from_utf8(o.stdout).unwrap())[0][2].parse().unwrap();
    assert!(p > 0.1 && p < 0.3, "{p}");
}

#[test]
fn bench_writes_one_row_per_method() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bench.csv");
    let o = ellrisk(&[
        "bench-table1",
        scenario("table1.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--reps",
        "2",
        "--mc-samples",
        "20000",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&fs::read_to_string(out).unwrap());
    let methods: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        methods,
        ["exact", "upper_bound", "mc", "bounding_volume", "center_point"]
    );
}

fn digest_dir(dir: &Path) -> String {
    let mut names: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut h = Sha256::new();
    for n in names {
        let name = n.to_str().unwrap();
        h.update(name.as_bytes());
        h.update(fs::read(dir.join(name)).unwrap());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let path = scenario("single_obstacle.json");
    let run = |out: &str| {
        let out = dir.path().join(out);
        let o = ellrisk(&[
            "simulate",
            path.to_str().unwrap(),
            "--method",
            "bounding_volume",
            "--runs",
            "1",
            "--seed",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stderr(&o).contains("seed 7"));
        out
    };
    let (a, b) = (run("a"), run("b"));
    assert!(a.join("metrics.csv").exists());
    assert!(a.join("summary.json").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["master_seed"], 7);
    assert_eq!(summary["scales"][0]["runs"].as_array().unwrap().len(), 1);
    assert_eq!(digest_dir(&a), digest_dir(&b));
}

#[test]
fn simulate_rejects_zero_runs() {
    let dir = TempDir::new().unwrap();
    let o = ellrisk(&[
        "simulate",
        scenario("single_obstacle.json").to_str().unwrap(),
        "--runs",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}
