use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bundle::{FeatureBundle, FeatureMask, Label, NetInput, Normalizer};
use super::net::{TamperNet, TamperNetConfig};
use crate::error::{Error, Result};
use crate::nnet::{bce_loss, learning_rate, read_checkpoint, write_checkpoint, AdamState, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub halve_every: usize,
    pub seed: u64,
    /// Train/validation/test fractions used when a caller splits one set.
    pub split: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr0: 0.001,
            halve_every: 10,
            seed: 0,
            split: [0.7, 0.15, 0.15],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput("epochs and batch size must be at least 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning rate {} must be positive",
                self.lr0
            )));
        }
        if self.split.iter().any(|f| !(*f > 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "split {:?} must be positive and sum to 1",
                self.split
            )));
        }
        Ok(())
    }

    /// Train, validation and test sizes for `n` samples; the test set takes
    /// the rounding remainder.
    pub fn split_counts(&self, n: usize) -> (usize, usize, usize) {
        let tr = ((n as f64 * self.split[0]).round() as usize).min(n);
        let va = ((n as f64 * self.split[1]).round() as usize).min(n - tr);
        (tr, va, n - tr - va)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Reason training stopped early, if it did.
    pub aborted: Option<String>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,val_loss,val_accuracy\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.lr, r.train_loss, r.val_loss, r.val_accuracy
            ));
        }
        s
    }
}

/// A network together with the normalization and feature mask it was
/// trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub net: TamperNet,
    pub normalizer: Normalizer,
    pub mask: FeatureMask,
    pub seed: u64,
    pub epoch: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    config: TamperNetConfig,
    mask: FeatureMask,
    seed: u64,
    epoch: usize,
    layers: Vec<Vec<String>>,
    n_params: usize,
    extra: serde_json::Value,
}

impl TrainedModel {
    pub fn predict_input(&self, x: &NetInput) -> Result<(Tensor, Tensor)> {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let (p, cache) = self.net.forward(x, &self.mask, false, &mut unused)?;
        Ok((p, cache.weights))
    }

    /// `[p(genuine), p(tampered)]` and the attention gate for one bundle.
    pub fn predict(&self, b: &FeatureBundle) -> Result<(Tensor, Tensor)> {
        b.validate(self.net.config.m_phase, self.net.config.m_freq)?;
        self.predict_input(&self.normalizer.apply(b, &self.mask))
    }

    /// Writes the checkpoint; `extra` lands in the header (e.g. a config
    /// hash).
    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = ModelMeta {
            config: self.net.config.clone(),
            mask: self.mask,
            seed: self.seed,
            epoch: self.epoch,
            layers: self
                .net
                .layer_kinds()
                .into_iter()
                .map(|v| v.into_iter().map(String::from).collect())
                .collect(),
            n_params: self.net.param_count(),
            extra,
        };
        let norm = self.normalizer.to_tensors();
        let mut tensors: Vec<&Tensor> = self.net.params();
        tensors.extend(norm.iter());
        write_checkpoint(path, serde_json::to_value(meta)?, &tensors)
    }

    /// Loads a checkpoint and returns it with the header's `extra` value.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (header, tensors) = read_checkpoint(path)?;
        let meta: ModelMeta = serde_json::from_value(header.meta)?;
        let mut net = TamperNet::build(&meta.config, 0)?;
        let n = net.params().len();
        if tensors.len() < n {
            return Err(Error::Format("checkpoint is missing parameter tensors".into()));
        }
        net.load_params(&tensors[..n])?;
        let normalizer = Normalizer::from_tensors(&tensors[n..])?;
        Ok((
            TrainedModel {
                net,
                normalizer,
                mask: meta.mask,
                seed: meta.seed,
                epoch: meta.epoch,
            },
            meta.extra,
        ))
    }
}

/// Stream seed for sample `index` of `epoch`.
fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z = seed ^ ((epoch as u64) << 32) ^ index as u64;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn labels_of(set: &[FeatureBundle]) -> Result<Vec<usize>> {
    set.iter()
        .map(|b| {
            b.label
                .map(Label::index)
                .ok_or_else(|| Error::InvalidInput("training and evaluation bundles must be labeled".into()))
        })
        .collect()
}

/// Mean loss and accuracy in inference mode.
fn score(model: &TrainedModel, inputs: &[NetInput], labels: &[usize]) -> Result<(f64, f64)> {
    let results: Vec<Result<(f64, bool)>> = inputs
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, &y)| {
            let (p, _) = model.predict_input(x)?;
            let (l, _) = bce_loss(&p, y)?;
            Ok((l, predicted_index(&p) == y))
        })
        .collect();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for r in results {
        let (l, ok) = r?;
        loss += l;
        correct += ok as usize;
    }
    let n = inputs.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

fn predicted_index(p: &Tensor) -> usize {
    if p.data[1] > p.data[0] {
        1
    } else {
        0
    }
}

/// Mini-batch Adam with a halving learning-rate schedule. Returns the
/// parameters of the epoch with the best validation accuracy (ties go to the
/// lower validation loss).
pub fn train(
    train_set: &[FeatureBundle],
    val_set: &[FeatureBundle],
    cfg: &TrainConfig,
    net_cfg: &TamperNetConfig,
    mask: FeatureMask,
) -> Result<(TrainedModel, History)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidInput(
            "training and validation sets must be non-empty".into(),
        ));
    }
    for b in train_set.iter().chain(val_set) {
        b.validate(net_cfg.m_phase, net_cfg.m_freq)?;
    }
    let train_labels = labels_of(train_set)?;
    let val_labels = labels_of(val_set)?;
    let positives = train_labels.iter().sum::<usize>();
    if positives * 5 < train_labels.len() * 2 || positives * 5 > train_labels.len() * 3 {
        warn!(
            "unbalanced training labels: {positives} tampered of {}",
            train_labels.len()
        );
    }

    let normalizer = Normalizer::fit(train_set)?;
    let train_x: Vec<NetInput> = train_set.iter().map(|b| normalizer.apply(b, &mask)).collect();
    let val_x: Vec<NetInput> = val_set.iter().map(|b| normalizer.apply(b, &mask)).collect();

    let mut model = TrainedModel {
        net: TamperNet::build(net_cfg, cfg.seed)?,
        normalizer,
        mask,
        seed: cfg.seed,
        epoch: 0,
    };
    let mut adam = AdamState::new(&model.net.params());
    let mut history = History::default();
    let mut best: Option<(TrainedModel, f64, f64)> = None;
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);

    'epochs: for epoch in 0..cfg.epochs {
        let lr = learning_rate(cfg.lr0, epoch, cfg.halve_every);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let net = &model.net;
            let per_sample: Vec<Result<(f64, Vec<Tensor>)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, epoch, i));
                    let (p, cache) = net.forward(&train_x[i], &mask, true, &mut rng)?;
                    let (l, dp) = bce_loss(&p, train_labels[i])?;
                    Ok((l, net.backward(&cache, &dp)?))
                })
                .collect();
            let mut grads: Option<Vec<Tensor>> = None;
            for r in per_sample {
                let (l, g) = r?;
                if !l.is_finite() {
                    history.aborted = Some(format!("non-finite loss at epoch {epoch}"));
                    break 'epochs;
                }
                epoch_loss += l;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
                }
            }
            let mut grads = grads.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale(scale));
            if let Err(e) = adam.step(model.net.params_mut(), &grads, lr) {
                history.aborted = Some(format!("epoch {epoch}: {e}"));
                break 'epochs;
            }
        }
        let (val_loss, val_accuracy) = score(&model, &val_x, &val_labels)?;
        let train_loss = epoch_loss / train_x.len() as f64;
        info!("epoch {epoch}: lr {lr:.2e} train {train_loss:.4} val {val_loss:.4} acc {val_accuracy:.3}");
        history.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_accuracy,
        });
        if !val_loss.is_finite() {
            history.aborted = Some(format!("non-finite validation loss at epoch {epoch}"));
            break;
        }
        let better = match &best {
            None => true,
            Some((_, acc, loss)) => val_accuracy > *acc || (val_accuracy == *acc && val_loss < *loss),
        };
        if better {
            let mut snap = model.clone();
            snap.epoch = epoch;
            best = Some((snap, val_accuracy, val_loss));
            history.best_epoch = epoch;
        }
    }
    match best {
        Some((m, _, _)) => Ok((m, history)),
        None => Err(Error::Diverged {
            epoch: 0,
            reason: history.aborted.unwrap_or_else(|| "no epoch completed".into()),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// A ratio had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

impl Metrics {
    /// Tampered is the positive class.
    pub fn from_confusion(c: Confusion) -> Self {
        let n = c.tp + c.fp + c.tn + c.fn_;
        let mut zero_division = false;
        let mut ratio = |num: f64, den: f64| {
            if den == 0.0 {
                zero_division = true;
                0.0
            } else {
                num / den
            }
        };
        let accuracy = ratio((c.tp + c.tn) as f64, n as f64);
        let precision = ratio(c.tp as f64, (c.tp + c.fp) as f64);
        let recall = ratio(c.tp as f64, (c.tp + c.fn_) as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        Metrics {
            accuracy,
            precision,
            recall,
            f1,
            confusion: c,
            zero_division,
        }
    }

    pub fn from_predictions(truth: &[Label], predicted: &[Label]) -> Self {
        let mut c = Confusion {
            tp: 0,
            fp: 0,
            tn: 0,
            fn_: 0,
        };
        for (t, p) in truth.iter().zip(predicted) {
            match (t, p) {
                (Label::Tampered, Label::Tampered) => c.tp += 1,
                (Label::Genuine, Label::Tampered) => c.fp += 1,
                (Label::Genuine, Label::Genuine) => c.tn += 1,
                (Label::Tampered, Label::Genuine) => c.fn_ += 1,
            }
        }
        Self::from_confusion(c)
    }
}

/// Predicted labels for a set, in order.
pub fn predict_labels(model: &TrainedModel, set: &[FeatureBundle]) -> Result<Vec<Label>> {
    set.par_iter()
        .map(|b| Ok(Label::from_index(predicted_index(&model.predict(b)?.0))))
        .collect()
}

pub fn evaluate(model: &TrainedModel, test_set: &[FeatureBundle]) -> Result<Metrics> {
    if test_set.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty set".into()));
    }
    let truth: Vec<Label> = labels_of(test_set)?.into_iter().map(Label::from_index).collect();
    let predicted = predict_labels(model, test_set)?;
    Ok(Metrics::from_predictions(&truth, &predicted))
}
