use std::path::Path;
use std::process::{Command, Output};

fn cbdl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbdl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = cbdl(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn chords_to_model_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let wavs = dir.path().join("chords");
    let feats = dir.path().join("feats.bin");
    let model = dir.path().join("model.cbdl");
    let eval = dir.path().join("eval.json");
    let sim = dir.path().join("sim.csv");
    let grid = dir.path().join("grid.cfg");
    std::fs::write(
        &grid,
        "lambdas = 0.1\ngamma1s = 0.1\ngamma2s = 0.1\natoms_per_class = 2\nc_svm = 1\niterations = 3\n",
    )
    .unwrap();

    ok(&["gen-chords", "--out", p(&wavs), "--per-class", "4", "--seed", "1"]);
    assert!(wavs.join("manifest.csv").exists());
    ok(&["features", "--in", p(&wavs), "--kind", "chroma", "--out", p(&feats)]);
    ok(&[
        "train", "--features", p(&feats), "--grid", p(&grid), "--protocol", "chord", "--model", p(&model),
    ]);
    ok(&["eval", "--model", p(&model), "--features", p(&feats), "--report", p(&eval)]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&eval).unwrap()).unwrap();
    assert_eq!(report["predictions"].as_array().unwrap().len(), 56);
    assert!(report["accuracy"].as_f64().unwrap() > 0.0);
    ok(&["similarity", "--model", p(&model), "--out", p(&sim)]);
    assert_eq!(std::fs::read_to_string(&sim).unwrap().lines().count(), 15);
}

#[test]
fn experiment_from_feature_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("f.csv");
    let mut text = String::new();
    for i in 0..24 {
        let class = ["north", "south"][i % 2];
        let v = if i % 2 == 0 { [1.0, 0.1, 0.0] } else { [0.1, 1.0, 0.2] };
        let jitter = 0.01 * i as f64;
        text.push_str(&format!("{class},{},{},{}\n", v[0] + jitter, v[1], v[2] - jitter));
    }
    std::fs::write(&csv, text).unwrap();
    let report = dir.path().join("r.json");
    ok(&[
        "experiment", "--features", p(&csv), "--method", "baseline:linear", "--protocol", "chord", "--report",
        p(&report), "--set", "num_splits=2", "--set", "c_svm=1",
    ]);
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["accuracies"].as_array().unwrap().len(), 2);
    assert_eq!(r["method"], "baseline:linear");
}

#[test]
fn exit_codes_follow_error_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "chords_per_class = 2\nunknown_key = 1\n").unwrap();
    let out = cbdl(&["experiment", "--config", p(&cfg), "--report", p(&report)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_key"));

    let out = cbdl(&["similarity", "--model", "/nonexistent/m.cbdl", "--out", p(&report)]);
    assert_eq!(out.status.code(), Some(3));

    let out = cbdl(&["features", "--in", p(dir.path()), "--kind", "mfcc", "--out", p(&report)]);
    assert!(!out.status.success());
}
