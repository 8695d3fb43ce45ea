use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use enf_tamper::pipeline::{PipelineConfig, Profile};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_enf-tamper"));
    c.env("RUST_LOG", "info");
    c
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_config(dir: &Path) -> String {
    let mut cfg = PipelineConfig::for_profile(Profile::Desk);
    cfg.corpus.n_genuine = 5;
    cfg.corpus.n_tampered = 5;
    cfg.train.epochs = 2;
    cfg.train.split = [0.6, 0.2, 0.2];
    let path = dir.join("small.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn missing_manifest_is_a_one_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["extract", "--manifest", "/nonexistent/manifest.json", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error")).collect();
    assert_eq!(lines.len(), 1, "{err}");
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    let corpus = d.join("corpus");
    let feats = d.join("feats");
    let model = d.join("model");
    let (corpus_s, feats_s, model_s) = (
        corpus.to_str().unwrap(),
        feats.to_str().unwrap(),
        model.to_str().unwrap(),
    );
    let manifest = corpus.join("manifest.json");
    let manifest_s = manifest.to_str().unwrap();

    run(&["--config", &cfg, "gen-corpus", "--out", corpus_s]);
    assert!(manifest.exists());
    assert!(corpus.join("config.toml").exists());

    run(&["--config", &cfg, "extract", "--manifest", manifest_s, "--out", feats_s]);
    let first = fs::read(feats.join("clip00000.feat")).unwrap();
    let index = fs::read(feats.join("features.json")).unwrap();
    let again = run(&["--config", &cfg, "extract", "--manifest", manifest_s, "--out", feats_s]);
    assert!(String::from_utf8_lossy(&again.stderr).contains("0 extracted, 10 reused"));
    assert_eq!(fs::read(feats.join("clip00000.feat")).unwrap(), first);
    assert_eq!(fs::read(feats.join("features.json")).unwrap(), index);

    run(&["--config", &cfg, "train", "--features", feats_s, "--out", model_s]);
    let history = fs::read_to_string(model.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let ckpt = model.join("model.ckpt");
    let ckpt_s = ckpt.to_str().unwrap();

    let out = run(&["eval", "--checkpoint", ckpt_s, "--features", feats_s]);
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["schema_version", "accuracy", "f1", "confusion"] {
        assert!(metrics.get(key).is_some(), "missing {key}");
    }
    assert_eq!(metrics["n"], 2);

    let wav = corpus.join("clip00000.wav");
    let out = run(&["predict", "--checkpoint", ckpt_s, wav.to_str().unwrap()]);
    let verdict: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(verdict["label"] == "genuine" || verdict["label"] == "tampered");
    let p = verdict["probability"].as_f64().unwrap();
    assert!((0.5..=1.0).contains(&p));

    let rep = d.join("report");
    run(&[
        "report",
        "--checkpoint",
        ckpt_s,
        "--out",
        rep.to_str().unwrap(),
        wav.to_str().unwrap(),
    ]);
    for f in ["phase.csv", "f_hil.csv", "attention.csv", "report.json"] {
        assert!(rep.join(f).exists(), "{f}");
    }
    let att = fs::read_to_string(rep.join("attention.csv")).unwrap();
    let cfg_desk = PipelineConfig::for_profile(Profile::Desk);
    assert_eq!(att.lines().count(), 1 + cfg_desk.net.fused_len());

    // a cache built with other extraction settings is refused
    let text = String::from_utf8(index).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let hash = v["feature_hash"].as_str().unwrap();
    fs::write(feats.join("features.json"), text.replace(hash, &"0".repeat(64))).unwrap();
    let out = bin()
        .args(["eval", "--checkpoint", ckpt_s, "--features", feats_s])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("different extraction settings"));
}
