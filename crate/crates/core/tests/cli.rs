use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mvtransfer::harness::output::read_csv;
use mvtransfer::harness::{run_rate_sweep, ExperimentConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvtransfer"))
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = r#"{
  "pipeline": "distill",
  "loss": "squared",
  "model": {"d_x": 4, "d_z": 3, "lambdas": [0.9, 0.5]},
  "labels": {"view": "x", "noise_std": 0.5, "norm": 1.0},
  "n_grid": [32, 64, 128],
  "seeds": 4,
  "bounds": {"b_w": 1.0, "b_v": 1.0},
  "s_mode": "oracle",
  "teacher_n": 512,
  "master_seed": 42
}"#;

#[test]
fn sweep_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", SMALL);
    let mut files = Vec::new();
    for out in ["one", "two"] {
        let out = dir.path().join(out);
        let o = run(bin()
            .arg("rate-sweep")
            .arg(&cfg)
            .arg("--output-dir")
            .arg(&out));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for name in ["sweep.csv", "summary.json", "rate.svg"] {
            assert!(out.join(name).is_file(), "{name} missing");
        }
        files.push(std::fs::read(out.join("sweep.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    let rows = read_csv(&dir.path().join("one/sweep.csv")).unwrap();
    assert_eq!(rows.len(), 12);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("one/summary.json")).unwrap())
            .unwrap();
    assert!(summary["rate_fit"]["slope"].is_number());
    let svg = std::fs::read_to_string(dir.path().join("one/rate.svg")).unwrap();
    assert!(svg.starts_with("<svg") && !svg.contains("href"));
}

#[test]
fn worker_count_does_not_change_rows() {
    let mut cfg = ExperimentConfig::from_json(SMALL).unwrap();
    cfg.workers = 1;
    let serial = run_rate_sweep(&cfg).unwrap();
    cfg.workers = 4;
    let parallel = run_rate_sweep(&cfg).unwrap();
    assert_eq!(serial.rows, parallel.rows);
    let mut single = cfg.clone();
    single.n_grid = vec![64];
    single.seeds = 1;
    assert_eq!(run_rate_sweep(&single).unwrap().rows.len(), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        &SMALL.replacen("\"seeds\": 4", "\"seeds\": 4, \"extra\": true", 1),
    );
    assert_eq!(
        run(bin().arg("rate-sweep").arg(&bad)).status.code(),
        Some(2)
    );
    let missing = dir.path().join("nope.json");
    assert_eq!(
        run(bin().arg("rate-sweep").arg(&missing)).status.code(),
        Some(2)
    );

    let banded = write(
        dir.path(),
        "banded.json",
        &SMALL.replacen(
            "\"master_seed\": 42",
            "\"master_seed\": 42, \"slope_band\": [5.0, 6.0]",
            1,
        ),
    );
    let out = dir.path().join("out");
    let o = run(bin()
        .arg("rate-sweep")
        .arg(&banded)
        .arg("--assert")
        .arg("--output-dir")
        .arg(&out));
    assert_eq!(o.status.code(), Some(4));
    let o = run(bin()
        .arg("rate-sweep")
        .arg(&banded)
        .arg("--output-dir")
        .arg(&out));
    assert_eq!(o.status.code(), Some(0));

    let stiff = write(
        dir.path(),
        "stiff.json",
        &SMALL.replacen(
            "\"master_seed\": 42",
            "\"master_seed\": 42, \"solver\": {\"max_iterations\": 1}",
            1,
        ),
    );
    assert_eq!(
        run(bin()
            .arg("rate-sweep")
            .arg(&stiff)
            .arg("--output-dir")
            .arg(&out))
        .status
        .code(),
        Some(3)
    );
}

#[test]
fn compare_and_probe_and_gen_data() {
    let dir = tempfile::tempdir().unwrap();
    let c = configs();
    let o = run(bin()
        .arg("compare")
        .arg(c.join("distill.json"))
        .arg(c.join("plain.json")));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("win_rate"));

    let o = run(bin()
        .arg("compare")
        .arg(c.join("distill.json"))
        .arg(c.join("coreg.json")));
    assert_eq!(o.status.code(), Some(2));

    let o = run(bin()
        .arg("stability-probe")
        .arg(c.join("stability.json"))
        .arg("--assert"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["displacement_violations"], 0);

    // gamma small enough to break (lambda + gamma) n >= 8 beta
    let weak = write(
        dir.path(),
        "weak.json",
        &std::fs::read_to_string(c.join("stability.json"))
            .unwrap()
            .replace("\"gamma\": 1.0", "\"gamma\": 0.01"),
    );
    let o = run(bin().arg("stability-probe").arg(&weak));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(">= 8 beta"));

    let csv = dir.path().join("data.csv");
    let o = run(bin()
        .arg("gen-data")
        .arg(c.join("coreg.json"))
        .arg(&csv)
        .arg("--n")
        .arg("10"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "x1,x2,x3,x4,x5,x6,z1,z2,z3,z4,z5,z6,y"
    );
    assert_eq!(lines.count(), 10);
}

#[test]
fn cca_check_passes() {
    let o = run(bin().args(["cca-check", "--instances", "200"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().all(|l| l.starts_with("PASS")));
}
