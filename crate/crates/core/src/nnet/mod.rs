//! Minimal dense/convolutional network substrate: layers with exact
//! backward passes, softmax cross-entropy, Adam and checkpoint blocks.

mod layers;
mod optim;
mod tensor;

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use layers::{sigmoid, softmax, Cache, Init, Layer, KERNEL, POOL};
pub use optim::{bce_loss, learning_rate, AdamState, PROB_FLOOR};
pub use tensor::{concat, split, Tensor};

use crate::error::{Error, Result};

/// A chain of layers applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn forward(&self, x: &Tensor, training: bool, rng: &mut dyn RngCore) -> Result<(Tensor, Vec<Cache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for l in &self.layers {
            let (y, c) = l.forward(&cur, training, rng)?;
            caches.push(c);
            cur = y;
        }
        Ok((cur, caches))
    }

    /// Input gradient and parameter gradients aligned with [`Self::params`].
    pub fn backward(&self, caches: &[Cache], g: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        if caches.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} caches for {} layers",
                caches.len(),
                self.layers.len()
            )));
        }
        let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        let mut cur = g.clone();
        for (l, c) in self.layers.iter().zip(caches).rev() {
            let (dx, dp) = l.backward(c, &cur)?;
            per_layer.push(dp);
            cur = dx;
        }
        per_layer.reverse();
        Ok((cur, per_layer.into_iter().flatten().collect()))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut s = input.to_vec();
        for l in &self.layers {
            s = l.output_shape(&s)?;
        }
        Ok(s)
    }
}

/// `|a − n| / max(|a|, |n|, 1e−6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between backpropagated and central-difference
/// gradients (step `eps`) of `Σ rᵢ yᵢ` for a fixed random projection `r`,
/// over both the input and every parameter. Dropout masks are replayed from
/// the same seed on every evaluation.
pub fn gradient_check(net: &Sequential, x: &Tensor, eps: f64, seed: u64) -> Result<f64> {
    let run = |n: &Sequential, input: &Tensor| -> Result<(Tensor, Vec<Cache>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        n.forward(input, true, &mut rng)
    };
    let (y, caches) = run(net, x)?;
    let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let r: Vec<f64> = (0..y.len()).map(|_| prng.gen_range(-1.0..1.0)).collect();
    let objective = |out: &Tensor| out.data.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
    let (dx, dparams) = net.backward(
        &caches,
        &Tensor {
            shape: y.shape.clone(),
            data: r.clone(),
        },
    )?;

    let mut worst: f64 = 0.0;
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data[i];
        xp.data[i] = orig + eps;
        let up = objective(&run(net, &xp)?.0);
        xp.data[i] = orig - eps;
        let down = objective(&run(net, &xp)?.0);
        xp.data[i] = orig;
        worst = worst.max(relative_error(dx.data[i], (up - down) / (2.0 * eps)));
    }
    let mut probe = net.clone();
    for (pi, grad) in dparams.iter().enumerate() {
        for k in 0..grad.len() {
            let orig = probe.params()[pi].data[k];
            probe.params_mut()[pi].data[k] = orig + eps;
            let up = objective(&run(&probe, x)?.0);
            probe.params_mut()[pi].data[k] = orig - eps;
            let down = objective(&run(&probe, x)?.0);
            probe.params_mut()[pi].data[k] = orig;
            worst = worst.max(relative_error(grad.data[k], (up - down) / (2.0 * eps)));
        }
    }
    Ok(worst)
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ENFTNET1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON header of a checkpoint file; tensor payloads follow as raw
/// little-endian `f64` blocks in `shapes` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub shapes: Vec<Vec<usize>>,
    pub meta: serde_json::Value,
}

pub fn write_checkpoint(path: &Path, meta: serde_json::Value, tensors: &[&Tensor]) -> Result<()> {
    write_blocks(path, CHECKPOINT_MAGIC, meta, tensors)
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<Tensor>)> {
    read_blocks(path, CHECKPOINT_MAGIC)
}

/// Writes `magic`, a length-prefixed JSON header and raw tensor blocks.
pub fn write_blocks(path: &Path, magic: &[u8; 8], meta: serde_json::Value, tensors: &[&Tensor]) -> Result<()> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        shapes: tensors.iter().map(|t| t.shape.clone()).collect(),
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * tensors.iter().map(|t| t.len()).sum::<usize>());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in tensors {
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_blocks(path: &Path, magic: &[u8; 8]) -> Result<(CheckpointHeader, Vec<Tensor>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(Error::Format(format!(
            "{} is not a {} file",
            path.display(),
            String::from_utf8_lossy(magic)
        )));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "block format {} is not supported (expected {CHECKPOINT_VERSION})",
            header.format_version
        )));
    }
    let mut at = 16 + hlen;
    let mut tensors = Vec::with_capacity(header.shapes.len());
    for shape in &header.shapes {
        let n: usize = shape.iter().product();
        let raw = bytes
            .get(at..at + 8 * n)
            .ok_or_else(|| Error::Format("truncated checkpoint payload".into()))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(shape.clone(), data)?);
        at += 8 * n;
    }
    if at != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }
    Ok((header, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng(seed);
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| r.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn gradient_check_every_layer_kind() {
        let mut r = rng(5);
        let cases: Vec<(Sequential, Tensor)> = vec![
            (
                Sequential::new(vec![Layer::dense(5, 4, Init::He, &mut r)]),
                random_tensor(&[5], 1),
            ),
            (
                Sequential::new(vec![Layer::conv2d(2, 3, Init::He, &mut r)]),
                random_tensor(&[2, 5, 4], 2),
            ),
            (Sequential::new(vec![Layer::MaxPool]), random_tensor(&[2, 6, 7], 3)),
            (Sequential::new(vec![Layer::Relu]), random_tensor(&[7], 4)),
            (Sequential::new(vec![Layer::Sigmoid]), random_tensor(&[6], 5)),
            (Sequential::new(vec![Layer::Softmax]), random_tensor(&[4], 6)),
            (
                Sequential::new(vec![Layer::Dropout { rate: 0.3 }]),
                random_tensor(&[9], 7),
            ),
            (Sequential::new(vec![Layer::Flatten]), random_tensor(&[2, 3, 2], 8)),
        ];
        for (net, x) in cases {
            let err = gradient_check(&net, &x, 1e-5, 42).unwrap();
            assert!(err < 1e-4, "{}: {err}", net.layers[0].kind());
        }
    }

    #[test]
    fn gradient_check_micro_networks() {
        let mut r = rng(9);
        let conv_net = Sequential::new(vec![
            Layer::conv2d(1, 2, Init::He, &mut r),
            Layer::Relu,
            Layer::MaxPool,
            Layer::Flatten,
            Layer::dense(8, 3, Init::Glorot, &mut r),
            Layer::Softmax,
        ]);
        let err = gradient_check(&conv_net, &random_tensor(&[1, 6, 6], 10), 1e-5, 1).unwrap();
        assert!(err < 1e-4, "{err}");
        let mlp = Sequential::new(vec![
            Layer::dense(4, 6, Init::He, &mut r),
            Layer::Relu,
            Layer::Dropout { rate: 0.2 },
            Layer::dense(6, 2, Init::Glorot, &mut r),
            Layer::Sigmoid,
        ]);
        let err = gradient_check(&mlp, &random_tensor(&[4], 11), 1e-5, 2).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn softmax_bce_composite_gradient() {
        let logits = Tensor::vector(vec![0.7, -1.3]);
        let net = Sequential::new(vec![Layer::Softmax]);
        let mut r = rng(0);
        let (p, caches) = net.forward(&logits, true, &mut r).unwrap();
        for label in 0..2 {
            let (_, g) = bce_loss(&p, label).unwrap();
            let (dz, _) = net.backward(&caches, &g).unwrap();
            for k in 0..2 {
                let onehot = if k == label { 1.0 } else { 0.0 };
                assert!((dz.data[k] - (p.data[k] - onehot)).abs() < 1e-12);
                let eps = 1e-6;
                let mut up = logits.clone();
                up.data[k] += eps;
                let mut down = logits.clone();
                down.data[k] -= eps;
                let lu = bce_loss(&Tensor::vector(softmax(&up.data)), label).unwrap().0;
                let ld = bce_loss(&Tensor::vector(softmax(&down.data)), label).unwrap().0;
                let numeric = (lu - ld) / (2.0 * eps);
                assert!(relative_error(dz.data[k], numeric) < 1e-5);
            }
        }
    }

    #[test]
    fn deterministic_initialization_and_training_step() {
        let build = || {
            let mut r = rng(77);
            Sequential::new(vec![
                Layer::dense(3, 4, Init::He, &mut r),
                Layer::Relu,
                Layer::dense(4, 2, Init::Glorot, &mut r),
                Layer::Softmax,
            ])
        };
        let step = |mut net: Sequential| {
            let mut adam = AdamState::new(&net.params());
            for i in 0..5 {
                let mut r = rng(i);
                let x = Tensor::vector(vec![0.1 * i as f64, -0.4, 0.9]);
                let (p, c) = net.forward(&x, true, &mut r).unwrap();
                let (_, g) = bce_loss(&p, (i % 2) as usize).unwrap();
                let (_, grads) = net.backward(&c, &g).unwrap();
                adam.step(net.params_mut(), &grads, 0.01).unwrap();
            }
            net
        };
        assert_eq!(build(), build());
        assert_eq!(step(build()), step(build()));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let a = random_tensor(&[3, 2], 1);
        let b = Tensor::vector(vec![f64::MIN_POSITIVE, -0.0, 1.0 / 3.0]);
        write_checkpoint(&path, serde_json::json!({"epoch": 4}), &[&a, &b]).unwrap();
        let (h, ts) = read_checkpoint(&path).unwrap();
        assert_eq!(h.meta["epoch"], 4);
        assert_eq!(ts[0], a);
        assert_eq!(ts[1].data[2].to_bits(), b.data[2].to_bits());
        std::fs::write(&path, b"garbage").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));
    }
}
