use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn camdepth(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_camdepth"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

const SPEC: &str =
    "trajectory = lateral\nmagnitude = 0.05\nn_frames = 6\nwidth = 128\nheight = 96\nfocal = 100\n\
                    background_center = 0 0 0\nbase_depth = 3\n";

/// A small dataset shared by the read-only tests.
fn dataset() -> &'static TempDir {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("scene.txt"), SPEC).unwrap();
        let o = camdepth(dir.path(), &["synth", "scene.txt", "--out", "data"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        dir
    })
}

#[test]
fn infeasible_spec_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.txt"),
        "trajectory = forward\nn_frames = 1\n",
    )
    .unwrap();
    let o = camdepth(dir.path(), &["synth", "bad.txt", "--out", "data"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_frames"));
    assert!(!dir.path().join("data").exists());
}

#[test]
fn unknown_config_key_exits_2() {
    let root = dataset().path();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "windw = 4\n").unwrap();
    let data = root.join("data");
    let o = camdepth(
        dir.path(),
        &[
            "solve",
            data.to_str().unwrap(),
            "--config",
            "run.cfg",
            "--out",
            "solve",
        ],
    );
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("windw"));
}

#[test]
fn usage_error_exits_2() {
    let o = camdepth(Path::new("."), &["solve"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_flow_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("scene.txt"), SPEC).unwrap();
    assert_eq!(
        code(&camdepth(
            dir.path(),
            &["synth", "scene.txt", "--out", "data"]
        )),
        0
    );
    let missing = dir.path().join("data/flow/low/000001_000002.flo");
    std::fs::remove_file(&missing).unwrap();
    let o = camdepth(dir.path(), &["solve", "data", "--out", "solve"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("000001_000002.flo"));
}

#[test]
fn eval_identical_inputs_gives_zero_error() {
    let root = dataset().path();
    let out = tempfile::tempdir().unwrap();
    let o = camdepth(
        root,
        &[
            "eval-traj",
            "data/poses_gt.txt",
            "data/poses_gt.txt",
            "--out",
            out.path().to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(out.path().join("metrics.csv")).unwrap();
    let values: Vec<f64> = csv
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(values.iter().all(|v| v.abs() < 1e-9), "{csv}");

    let o = camdepth(
        root,
        &[
            "eval-depth",
            "data/depth_gt",
            "data/depth_gt",
            "--out",
            out.path().to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(out.path().join("metrics.csv")).unwrap();
    let values: Vec<f64> = csv
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!(
        values[0].abs() < 1e-9 && values[1].abs() < 1e-9 && (values[2] - 100.0).abs() < 1e-9,
        "{csv}"
    );
}

#[test]
fn synth_writes_manifest_with_hashes() {
    let root = dataset().path();
    let text = std::fs::read_to_string(root.join("data/run_manifest.txt")).unwrap();
    assert!(text.starts_with("command = synth\nseed = "));
    assert!(text.contains("sha256.poses_gt.txt = "));
}
