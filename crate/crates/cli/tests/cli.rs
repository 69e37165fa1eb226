//! End-to-end runs of the `jumplab` binary: exit codes, summary contents,
//! and byte-level reproducibility of the artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_jumplab")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("jumplab-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const STABLE_VERIFY: &str = r#"
seed = 7

[kernel]
family = "isotropic-stable"
dimension = 1
alpha = 0.5
kappa = 1.0

[experiments.kernel-verify]
center = [0.0]
radius = 0.1
grid_points = 32
random_pairs = 32
"#;

#[test]
fn kernel_verify_passes_with_exit_zero() {
    let dir = temp_dir("verify-pass");
    let cfg = write_config(&dir, "scenario.toml", STABLE_VERIFY);
    let out = dir.join("out");
    let status = Command::new(bin())
        .args(["kernel-verify", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let summary = fs::read_to_string(out.join("kernel-verify/summary.json")).unwrap();
    assert!(summary.contains("\"status\": \"pass\""));
    assert!(summary.contains("bounds:band"));
    assert!(summary.contains("bounds:tail-mass"));
    assert!(summary.contains("bounds:local-lower"));
}

#[test]
fn false_tail_constant_fails_with_exit_one() {
    let dir = temp_dir("verify-fail");
    let body = STABLE_VERIFY.replace(
        "[experiments.kernel-verify]",
        "[kernel.bounds]\nkappa3 = 3.9\n\n[experiments.kernel-verify]",
    );
    let cfg = write_config(&dir, "scenario.toml", &body);
    let out = dir.join("out");
    let status = Command::new(bin())
        .args(["kernel-verify", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let summary = fs::read_to_string(out.join("kernel-verify/summary.json")).unwrap();
    assert!(summary.contains("\"status\": \"fail\""));
    // The tail-mass witness carries the true value 4.0.
    let csv = fs::read_to_string(out.join("kernel-verify/bounds_report.csv")).unwrap();
    let tail_row = csv.lines().find(|l| l.starts_with("tail-mass")).unwrap();
    assert!(tail_row.contains("false"));
    let witness: f64 = tail_row.split(',').nth(3).unwrap().parse().unwrap();
    assert!((witness - 4.0).abs() < 1e-6, "witness {witness}");
}

const EXIT_MC_SMALL: &str = r#"
seed = 11

[kernel]
family = "isotropic-stable"
dimension = 1
alpha = 0.5
kappa = 1.0

[lattice]
n = 64
box = [-2.0, 2.0]

[experiments.exit-mc]
x0 = [0.0]
r_grid = [0.2, 0.4]
t_grid = [0.02, 0.05]
paths = 1000
quad_order = 4
"#;

#[test]
fn oversized_ball_is_a_config_error() {
    let dir = temp_dir("ball-too-big");
    let body = EXIT_MC_SMALL.replace("r_grid = [0.2, 0.4]", "r_grid = [0.2, 2.5]");
    let cfg = write_config(&dir, "scenario.toml", &body);
    let out = dir.join("out");
    let output = Command::new(bin())
        .args(["exit-mc", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("leaves the box"), "stderr: {stderr}");
    let summary = fs::read_to_string(out.join("exit-mc/summary.json")).unwrap();
    assert!(summary.contains("config-error"));
}

#[test]
fn missing_experiment_table_is_a_config_error() {
    let dir = temp_dir("missing-table");
    let cfg = write_config(&dir, "scenario.toml", STABLE_VERIFY);
    let status = Command::new(bin())
        .args(["functionals", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

fn artifact_bytes(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for entry in fs::read_dir(out).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().to_string_lossy().to_string();
        if name == "metadata.json" {
            continue; // wall time lives here, by design
        }
        files.push((name, fs::read(entry.path()).unwrap()));
    }
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = temp_dir("repro");
    let cfg = write_config(&dir, "scenario.toml", EXIT_MC_SMALL);
    let mut captured: Option<Vec<(String, Vec<u8>)>> = None;
    for (tag, threads) in [("a", "1"), ("b", "4"), ("c", "1")] {
        let out = dir.join(format!("out-{tag}"));
        let status = Command::new(bin())
            .args(["exit-mc", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--threads", threads])
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
        let files = artifact_bytes(&out.join("exit-mc"));
        assert!(!files.is_empty());
        match &captured {
            None => captured = Some(files),
            Some(reference) => {
                assert_eq!(reference.len(), files.len());
                for ((na, ba), (nb, bb)) in reference.iter().zip(&files) {
                    assert_eq!(na, nb);
                    assert_eq!(ba, bb, "artifact {na} differs between runs");
                }
            }
        }
    }
}
