#![allow(clippy::field_reassign_with_default)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepbow::config::RunConfig;
use deepbow::eval::{KernelKind, ParamGrid};
use deepbow::synth::{write_corpus, SynthSpec};
use deepbow::Species;

fn deepbow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepbow"))
        .args(args)
        .env_remove("DEEPBOW_OUTPUT_DIR")
        .env_remove("DEEPBOW_WORKERS")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small corpus plus a config with a single-point grid.
fn setup(root: &Path) -> PathBuf {
    let spec = SynthSpec {
        species: vec![Species::CA, Species::CL],
        scans_per_preparation: 3,
        height: 256,
        width: 256,
        seed: 5,
    };
    write_corpus(&root.join("corpus"), &spec).unwrap();
    let mut cfg = RunConfig::default();
    cfg.manifest = root.join("corpus/manifest.csv");
    cfg.output_dir = root.join("out");
    cfg.preprocess.patch.patch_size = 32;
    cfg.preprocess.patch.stride = 32;
    cfg.encoding.k = 2;
    cfg.classifier.inner_folds = 2;
    cfg.report.bow_k = 3;
    cfg.grid = ParamGrid {
        fv_k: vec![2],
        kernels: vec![KernelKind::Linear],
        c: vec![10.0],
        gamma: vec![0.001],
        ..ParamGrid::default()
    };
    let path = root.join("run.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn run_ok(args: &[&str]) -> Output {
    let out = deepbow(args);
    assert!(out.status.success(), "{args:?} failed: {}", stderr(&out));
    out
}

#[test]
fn empty_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.csv");
    std::fs::write(&manifest, "scan_id,path,species,preparation_id\n").unwrap();
    let out = deepbow(&[
        "preprocess",
        "--manifest",
        manifest.to_str().unwrap(),
        "--output-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("manifest is empty"), "{}", stderr(&out));
}

#[test]
fn bad_flag_exits_one() {
    let out = deepbow(&["evaluate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = deepbow(&["predict", "--scan", "x.png", "--fold", "3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_model_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let scan = dir.path().join("corpus/CA_p1_00.png");
    let out = deepbow(&[
        "predict",
        "--config",
        config.to_str().unwrap(),
        "--scan",
        scan.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("model file missing"), "{}", stderr(&out));
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let cfg = config.to_str().unwrap();
    let out = dir.path().join("out");

    run_ok(&["preprocess", "--config", cfg]);
    let index = std::fs::read(out.join("patch_index.tsv")).unwrap();
    assert!(out.join("masks/CA_p1_00.png").exists());
    run_ok(&["preprocess", "--config", cfg]);
    assert_eq!(
        std::fs::read(out.join("patch_index.tsv")).unwrap(),
        index,
        "patch index changed on rerun"
    );

    run_ok(&["encode", "--config", cfg]);
    let vocab = std::fs::read(out.join("vocab_fold1.pvmd")).unwrap();
    let encoded = std::fs::read(out.join("encoded_fold1.pvef")).unwrap();
    assert_eq!(&vocab[..4], b"PVMD");
    run_ok(&["encode", "--config", cfg, "--reuse"]);
    assert_eq!(std::fs::read(out.join("vocab_fold1.pvmd")).unwrap(), vocab);
    assert_eq!(std::fs::read(out.join("encoded_fold1.pvef")).unwrap(), encoded);

    run_ok(&["evaluate", "--config", cfg]);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    for fold in json["patch"]["folds"].as_array().unwrap() {
        assert_eq!(fold["chosen"]["k"], 2);
        assert_eq!(fold["chosen"]["model"]["c"], 10.0);
    }
    let grid = std::fs::read_to_string(out.join("grid_scores.tsv")).unwrap();
    assert_eq!(grid.lines().count(), 3, "{grid}");
    let table = std::fs::read_to_string(out.join("scan_report.tsv")).unwrap();
    assert!(
        table.starts_with("method\tCA\tCG\tCL\tCN\tCP\tCT\tMF\tSB\tSC\tTotal\nFV SVM\t"),
        "{table}"
    );
    // absent species print a dash
    assert_eq!(table.lines().nth(1).unwrap().split('\t').nth(2), Some("-"));

    let scan = dir.path().join("corpus/CL_p2_01.png");
    let pred = run_ok(&["predict", "--config", cfg, "--scan", scan.to_str().unwrap()]);
    let verdict: serde_json::Value = serde_json::from_slice(&pred.stdout).unwrap();
    assert_eq!(verdict["scan_id"], "CL_p2_01");
    assert_eq!(verdict["winner"], "CL");
    assert!(!verdict["patches"].as_array().unwrap().is_empty());

    let blank = dir.path().join("blank.png");
    image::GrayImage::from_pixel(256, 256, image::Luma([255u8]))
        .save(&blank)
        .unwrap();
    let out_blank = deepbow(&["predict", "--config", cfg, "--scan", blank.to_str().unwrap()]);
    assert_eq!(out_blank.status.code(), Some(2));
    assert!(
        stderr(&out_blank).contains("no foreground patches"),
        "{}",
        stderr(&out_blank)
    );

    run_ok(&["report", "--config", cfg, "--fold", "2"]);
    let mean_bow = std::fs::read_to_string(out.join("mean_bow.tsv")).unwrap();
    assert!(mean_bow.lines().count() > 1);
    let nearest = std::fs::read_to_string(out.join("nearest_patches.tsv")).unwrap();
    assert!(nearest.lines().count() > 1);
    let certainty = std::fs::read_to_string(out.join("certainty_fold2.tsv")).unwrap();
    assert!(certainty.lines().count() > 1);
}

#[test]
fn synth_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    run_ok(&[
        "synth",
        "--out",
        out.to_str().unwrap(),
        "--species",
        "CA,SB",
        "--scans",
        "2",
        "--size",
        "96",
    ]);
    let manifest = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 2 * 2 * 2);
    assert!(manifest.contains("SB_p2_01"));
}
