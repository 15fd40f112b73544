use std::path::Path;
use std::process::{Command, Output};

use shiftpool::io::read_tensor;
use shiftpool::report::read_table;

fn shiftpool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftpool")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn build_filter_writes_binomial_kernels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k.aapt");
    let run = shiftpool(&["build-filter", "--size", "5", "--out", p(&out)]);
    assert!(run.status.success());
    let k = read_tensor(&out).unwrap();
    assert_eq!(k.shape(), [5, 5]);
    assert_eq!(k.data()[12], 36.0 / 256.0);
    assert!((k.sum() - 1.0).abs() < 1e-9);

    let run = shiftpool(&["build-filter", "--order", "2", "--out", p(&out)]);
    assert!(run.status.success());
    let k = read_tensor(&out).unwrap();
    assert_eq!(k.shape(), [1, 4]);
    assert_eq!(k.data(), [0.125, 0.375, 0.375, 0.125]);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k.aapt");
    let size_one = shiftpool(&["build-filter", "--size", "1", "--out", p(&out)]);
    assert_ne!(size_one.status.code(), Some(0));
    assert!(!size_one.stderr.is_empty());

    let missing = dir.path().join("missing");
    let train = shiftpool(&["train", "--data", p(&missing), "--out", p(&dir.path().join("o"))]);
    assert_eq!(train.status.code(), Some(2));

    let protocol = shiftpool(&["shift-eval", "--checkpoint", "x", "--data", "y", "--protocols", "diagonal", "--out", "z"]);
    assert_eq!(protocol.status.code(), Some(2));

    let pooling = shiftpool(&["train", "--data", "d", "--out", "o", "--pooling", "wavelet"]);
    assert_eq!(pooling.status.code(), Some(2));
}

#[test]
fn oracle_passes_and_negative_control_fails() {
    assert!(shiftpool(&["oracle"]).status.success());
    let perturbed = shiftpool(&["oracle", "--suite", "filter", "--perturb-normalization"]);
    assert!(!perturbed.status.success());
    assert!(String::from_utf8_lossy(&perturbed.stdout).contains("FAIL"));
}

#[test]
fn end_to_end_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let runs = dir.path().join("runs");
    assert!(shiftpool(&["gen-data", "--out", p(&data), "--clips-per-class", "10", "--seed", "1"]).status.success());
    let train = shiftpool(&[
        "train", "--data", p(&data), "--out", p(&runs), "--epochs", "1", "--batch-size", "16", "--runs", "2", "--pooling",
        "tlpf5+aps",
    ]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    for seed in [0, 1] {
        let d = runs.join(format!("seed-{seed}"));
        assert!(d.join("checkpoint").join("checkpoint.json").is_file());
        let (header, rows) = read_table(&d.join("history.csv")).unwrap();
        assert_eq!(header, ["epoch", "train_loss", "val_map", "val_loss", "lr"]);
        assert_eq!(rows.len(), 1);
    }

    let ckpt = runs.join("seed-0").join("checkpoint");
    let map = dir.path().join("map.csv");
    assert!(shiftpool(&["eval-map", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&map)]).status.success());
    let (_, rows) = read_table(&map).unwrap();
    assert!(rows.iter().any(|r| r[0] == "mAP"));

    let shift = dir.path().join("shift");
    let named = format!("prop={}", p(&ckpt));
    let run = shiftpool(&[
        "shift-eval", "--checkpoint", &named, "--data", p(&data), "--magnitudes", "0", "--out", p(&shift), "--plot",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let (header, rows) = read_table(&shift.join("summary.csv")).unwrap();
    assert_eq!(header, ["protocol", "prop_consistency_pct", "prop_mac"]);
    for row in &rows {
        assert_eq!(row[1].parse::<f64>().unwrap(), 100.0);
        assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);
    }
    assert!(shift.join("prop").join("time-0.csv").is_file());
    assert!(shift.join("eligible.txt").is_file());
    assert!(shift.join("score_vs_shift.svg").is_file());

    let missing_ckpt = shiftpool(&["shift-eval", "--checkpoint", p(&dir.path().join("none")), "--data", p(&data), "--out", p(&shift)]);
    assert_ne!(missing_ckpt.status.code(), Some(0));
}
