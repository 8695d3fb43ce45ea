use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use enf_tamper::audio_io::read_wav;
use enf_tamper::corpus::{generate_corpus, CorpusManifest, MANIFEST_FILE};
use enf_tamper::model::{evaluate, train, FeatureBundle, FeatureMask, Label, TrainedModel};
use enf_tamper::pipeline::{ClipFeatures, Pipeline, PipelineConfig, Profile};

use crate::{Cli, Command, Features, ProfileArg, SplitArg};

pub const OUTPUT_SCHEMA_VERSION: u32 = 1;
const INDEX_FILE: &str = "features.json";
const CHECKPOINT_FILE: &str = "model.ckpt";

/// Written by `extract` next to the per-clip feature files.
#[derive(Debug, Serialize, Deserialize)]
struct FeatureIndex {
    schema_version: u32,
    feature_hash: String,
    manifest_hash: String,
    config: String,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    id: String,
    label: Label,
    file: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    match cli.command {
        Command::GenCorpus { out } => gen_corpus(&config, &out),
        Command::Extract { manifest, out } => extract(&config, &manifest, &out),
        Command::Train {
            features,
            out,
            use_features,
        } => train_cmd(&config, &features, &out, use_features),
        Command::Eval {
            checkpoint,
            features,
            split,
            out,
        } => eval_cmd(&checkpoint, &features, split, out.as_deref()),
        Command::Predict { checkpoint, wav } => predict(&checkpoint, &wav),
        Command::Report { checkpoint, out, wav } => report(&checkpoint, &wav, &out),
    }
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::for_profile(match cli.profile {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Desk => Profile::Desk,
        }),
    };
    if let Some(seed) = cli.seed {
        cfg.corpus.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, text.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes))
        .with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming {}", tmp.display()))
}

fn gen_corpus(config: &PipelineConfig, out: &Path) -> Result<()> {
    let manifest = generate_corpus(&config.corpus, out)?;
    fs::write(out.join("config.toml"), config.to_toml()?)?;
    info!(
        "wrote {} clips and {} to {}",
        manifest.entries.len(),
        MANIFEST_FILE,
        out.display()
    );
    Ok(())
}

fn extract(config: &PipelineConfig, manifest_path: &Path, out: &Path) -> Result<()> {
    let manifest = CorpusManifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let feature_hash = config.feature_hash();
    let pipeline = Pipeline::new(config)?;
    let meta = serde_json::json!({ "feature_hash": feature_hash });

    let done: Vec<bool> = manifest
        .entries
        .par_iter()
        .map(|e| -> Result<bool> {
            let file = out.join(format!("{}.feat", e.id));
            if let Ok((f, m)) = ClipFeatures::load(&file) {
                if m == meta && f.id == e.id && f.label == Some(e.label) {
                    return Ok(false);
                }
            }
            let clip = read_wav(root.join(&e.path))?;
            let features = pipeline
                .extract(&clip, Some(e.label))
                .with_context(|| format!("extracting {}", e.id))?;
            let tmp = file.with_extension("partial");
            features.save(&tmp, meta.clone())?;
            fs::rename(&tmp, &file)?;
            Ok(true)
        })
        .collect::<Result<_>>()?;
    let fresh = done.iter().filter(|d| **d).count();
    info!("{fresh} extracted, {} reused", done.len() - fresh);

    let index = FeatureIndex {
        schema_version: OUTPUT_SCHEMA_VERSION,
        feature_hash,
        manifest_hash: manifest.hash(),
        config: config.to_toml()?,
        entries: manifest
            .entries
            .iter()
            .map(|e| IndexEntry {
                id: e.id.clone(),
                label: e.label,
                file: PathBuf::from(format!("{}.feat", e.id)),
            })
            .collect(),
    };
    write_json(&out.join(INDEX_FILE), &index)
}

fn load_index(dir: &Path) -> Result<FeatureIndex> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let index: FeatureIndex = serde_json::from_str(&text)?;
    ensure!(
        index.schema_version == OUTPUT_SCHEMA_VERSION,
        "{} has schema {}, expected {OUTPUT_SCHEMA_VERSION}",
        path.display(),
        index.schema_version
    );
    Ok(index)
}

fn load_bundles(dir: &Path, index: &FeatureIndex, pipeline: &Pipeline) -> Result<Vec<FeatureBundle>> {
    index
        .entries
        .par_iter()
        .map(|e| {
            let path = dir.join(&e.file);
            let (f, meta) = ClipFeatures::load(&path).with_context(|| format!("reading {}", path.display()))?;
            ensure!(
                meta["feature_hash"] == index.feature_hash.as_str(),
                "{} was extracted with different settings",
                path.display()
            );
            Ok(pipeline.bundle(&f)?)
        })
        .collect()
}

fn split_range(config: &PipelineConfig, n: usize, split: SplitArg) -> std::ops::Range<usize> {
    let (tr, va, _) = config.train.split_counts(n);
    match split {
        SplitArg::Train => 0..tr,
        SplitArg::Val => tr..tr + va,
        SplitArg::Test => tr + va..n,
        SplitArg::All => 0..n,
    }
}

fn mask_for(f: Features) -> FeatureMask {
    match f {
        Features::All => FeatureMask::ALL,
        Features::Shallow => FeatureMask::SHALLOW_ONLY,
        Features::Phase => FeatureMask::PHASE_BRANCH,
        Features::Freq => FeatureMask::FREQ_BRANCH,
    }
}

fn train_cmd(config: &PipelineConfig, features: &Path, out: &Path, use_features: Features) -> Result<()> {
    let index = load_index(features)?;
    ensure!(
        index.feature_hash == config.feature_hash(),
        "feature cache {} was built with different extraction settings",
        features.display()
    );
    let pipeline = Pipeline::new(config)?;
    let bundles = load_bundles(features, &index, &pipeline)?;
    let n = bundles.len();
    let train_set = &bundles[split_range(config, n, SplitArg::Train)];
    let val_set = &bundles[split_range(config, n, SplitArg::Val)];
    ensure!(
        !train_set.is_empty() && !val_set.is_empty(),
        "{n} clips are too few for the configured split"
    );
    info!("training on {} clips, validating on {}", train_set.len(), val_set.len());
    let (model, history) = train(train_set, val_set, &config.train, &config.net, mask_for(use_features))?;
    if let Some(reason) = &history.aborted {
        warn!("training stopped early: {reason}");
    }
    fs::create_dir_all(out)?;
    let extra = serde_json::json!({
        "schema_version": OUTPUT_SCHEMA_VERSION,
        "config": config.to_toml()?,
        "config_hash": config.hash(),
        "feature_hash": config.feature_hash(),
        "manifest_hash": index.manifest_hash,
    });
    model.save(&out.join(CHECKPOINT_FILE), extra)?;
    write_atomic(&out.join("history.csv"), history.to_csv().as_bytes())?;
    info!(
        "best epoch {} of {}; checkpoint in {}",
        history.best_epoch,
        history.epochs.len(),
        out.display()
    );
    Ok(())
}

struct Loaded {
    model: TrainedModel,
    config: PipelineConfig,
    extra: serde_json::Value,
}

fn load_model(path: &Path) -> Result<Loaded> {
    let (model, extra) = TrainedModel::load(path).with_context(|| format!("loading {}", path.display()))?;
    let text = extra["config"]
        .as_str()
        .with_context(|| format!("{} carries no pipeline config", path.display()))?;
    let config: PipelineConfig = toml::from_str(text)?;
    config.validate()?;
    ensure!(
        extra["config_hash"] == config.hash().as_str(),
        "{} has an inconsistent config hash",
        path.display()
    );
    Ok(Loaded { model, config, extra })
}

fn eval_cmd(checkpoint: &Path, features: &Path, split: SplitArg, out: Option<&Path>) -> Result<()> {
    let loaded = load_model(checkpoint)?;
    let index = load_index(features)?;
    if loaded.extra["feature_hash"] != index.feature_hash.as_str() {
        bail!(
            "checkpoint {} and feature cache {} come from different extraction settings",
            checkpoint.display(),
            features.display()
        );
    }
    let pipeline = Pipeline::new(&loaded.config)?;
    let bundles = load_bundles(features, &index, &pipeline)?;
    let set = &bundles[split_range(&loaded.config, bundles.len(), split)];
    ensure!(!set.is_empty(), "the selected split is empty");
    let m = evaluate(&loaded.model, set)?;
    let report = serde_json::json!({
        "schema_version": OUTPUT_SCHEMA_VERSION,
        "config_hash": loaded.extra["config_hash"],
        "n": set.len(),
        "accuracy": m.accuracy,
        "precision": m.precision,
        "recall": m.recall,
        "f1": m.f1,
        "zero_division": m.zero_division,
        "confusion": m.confusion,
    });
    match out {
        Some(path) => write_json(path, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn predict(checkpoint: &Path, wav: &Path) -> Result<()> {
    let loaded = load_model(checkpoint)?;
    let pipeline = Pipeline::new(&loaded.config)?;
    let clip = read_wav(wav)?;
    let features = pipeline.extract(&clip, None)?;
    let (probs, _) = loaded.model.predict(&pipeline.bundle(&features)?)?;
    let label = if probs.data[1] > probs.data[0] {
        Label::Tampered
    } else {
        Label::Genuine
    };
    let verdict = serde_json::json!({
        "schema_version": OUTPUT_SCHEMA_VERSION,
        "config_hash": loaded.extra["config_hash"],
        "file": wav.display().to_string(),
        "label": label,
        "probability": probs.data[label.index()],
        "p_tampered": probs.data[1],
    });
    println!("{}", serde_json::to_string(&verdict)?);
    Ok(())
}

fn report(checkpoint: &Path, wav: &Path, out: &Path) -> Result<()> {
    let loaded = load_model(checkpoint)?;
    let pipeline = Pipeline::new(&loaded.config)?;
    let clip = read_wav(wav)?;
    let analysis = pipeline.analyze(&clip, None)?;
    let (probs, weights) = loaded.model.predict(&pipeline.bundle(&analysis.features)?)?;
    fs::create_dir_all(out)?;

    let hop = loaded.config.analysis_rate as f64 / loaded.config.nominal_hz;
    let mut phase = String::from("frame,time_s,phi0,phi1\n");
    for (i, (p0, p1)) in analysis.phase.phi0.iter().zip(&analysis.phase.phi1).enumerate() {
        let t = i as f64 * hop / loaded.config.analysis_rate as f64;
        phase.push_str(&format!("{i},{t},{p0},{p1}\n"));
    }
    write_atomic(&out.join("phase.csv"), phase.as_bytes())?;

    let f = &analysis.freq;
    let mut fhil = String::from("sample,time_s,f_hil_hz\n");
    for (i, v) in f.f_hil.iter().enumerate() {
        let t = (i + f.trim_samples) as f64 / f.sample_rate as f64;
        fhil.push_str(&format!("{i},{t},{v}\n"));
    }
    write_atomic(&out.join("f_hil.csv"), fhil.as_bytes())?;

    let net = &loaded.model.net.config;
    let branch = net.effective_branch();
    let mut att = String::from("index,family,weight\n");
    for (i, w) in weights.data.iter().enumerate() {
        let family = match i {
            i if i < 3 => "shallow",
            i if i < 3 + branch => "deep_phase",
            _ => "deep_freq",
        };
        att.push_str(&format!("{i},{family},{w}\n"));
    }
    write_atomic(&out.join("attention.csv"), att.as_bytes())?;

    let summary = serde_json::json!({
        "schema_version": OUTPUT_SCHEMA_VERSION,
        "config_hash": loaded.extra["config_hash"],
        "file": wav.display().to_string(),
        "p_tampered": probs.data[1],
        "shallow": analysis.features.shallow,
        "phase_frames": analysis.phase.phi0.len(),
        "f_hil_samples": f.f_hil.len(),
    });
    write_json(&out.join("report.json"), &summary)?;
    info!("report written to {}", out.display());
    Ok(())
}
