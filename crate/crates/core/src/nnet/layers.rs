use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const KERNEL: usize = 3;
pub const POOL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    He,
    Glorot,
}

/// One layer with its parameters. Convolutions are 3×3, stride 1, zero
/// "same" padding; pooling is 3×3 with stride 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense { w: Tensor, b: Tensor },
    Conv2d { w: Tensor, b: Tensor },
    MaxPool,
    Relu,
    Sigmoid,
    Softmax,
    Dropout { rate: f64 },
    Flatten,
}

/// What a forward pass keeps for the matching backward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    Output(Tensor),
    Pool { argmax: Vec<usize>, in_shape: Vec<usize> },
    Mask(Option<Vec<f64>>),
    Shape(Vec<usize>),
}

fn uniform(n: usize, limit: f64, rng: &mut dyn RngCore) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-limit..=limit)).collect()
}

fn limit(init: Init, fan_in: usize, fan_out: usize) -> f64 {
    match init {
        Init::He => (6.0 / fan_in as f64).sqrt(),
        Init::Glorot => (6.0 / (fan_in + fan_out) as f64).sqrt(),
    }
}

fn shape_err(layer: &str, want: String, got: &[usize]) -> Error {
    Error::Shape(format!("{layer} expects {want}, got {got:?}"))
}

fn stale() -> Error {
    Error::Shape("cache does not match layer".into())
}

impl Layer {
    pub fn dense(n_in: usize, n_out: usize, init: Init, rng: &mut dyn RngCore) -> Self {
        let l = limit(init, n_in, n_out);
        Layer::Dense {
            w: Tensor {
                shape: vec![n_out, n_in],
                data: uniform(n_in * n_out, l, rng),
            },
            b: Tensor::zeros(&[n_out]),
        }
    }

    pub fn conv2d(c_in: usize, c_out: usize, init: Init, rng: &mut dyn RngCore) -> Self {
        let k2 = KERNEL * KERNEL;
        let l = limit(init, c_in * k2, c_out * k2);
        Layer::Conv2d {
            w: Tensor {
                shape: vec![c_out, c_in, KERNEL, KERNEL],
                data: uniform(c_out * c_in * k2, l, rng),
            },
            b: Tensor::zeros(&[c_out]),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::MaxPool => "maxpool",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Softmax => "softmax",
            Layer::Dropout { .. } => "dropout",
            Layer::Flatten => "flatten",
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense { w, b } | Layer::Conv2d { w, b } => vec![w, b],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense { w, b } | Layer::Conv2d { w, b } => vec![w, b],
            _ => vec![],
        }
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense { w, .. } => {
                let n: usize = input.iter().product();
                if input.len() != 1 || n != w.shape[1] {
                    return Err(shape_err("dense", format!("[{}]", w.shape[1]), input));
                }
                Ok(vec![w.shape[0]])
            }
            Layer::Conv2d { w, .. } => {
                if input.len() != 3 || input[0] != w.shape[1] {
                    return Err(shape_err("conv2d", format!("[{}, h, w]", w.shape[1]), input));
                }
                Ok(vec![w.shape[0], input[1], input[2]])
            }
            Layer::MaxPool => {
                if input.len() != 3 || input[1] < POOL || input[2] < POOL {
                    return Err(shape_err("maxpool", "[c, h ≥ 3, w ≥ 3]".into(), input));
                }
                Ok(vec![input[0], input[1] / POOL, input[2] / POOL])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            _ => Ok(input.to_vec()),
        }
    }

    pub fn forward(&self, x: &Tensor, training: bool, rng: &mut dyn RngCore) -> Result<(Tensor, Cache)> {
        let out_shape = self.output_shape(&x.shape)?;
        match self {
            Layer::Dense { w, b } => {
                let (n_out, n_in) = (w.shape[0], w.shape[1]);
                let mut y = b.data.clone();
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &w.data[o * n_in..(o + 1) * n_in];
                    *yo += row.iter().zip(&x.data).map(|(a, b)| a * b).sum::<f64>();
                }
                debug_assert_eq!(y.len(), n_out);
                Ok((Tensor::vector(y), Cache::Input(x.clone())))
            }
            Layer::Conv2d { w, b } => {
                let y = conv_forward(w, b, x);
                Ok((y, Cache::Input(x.clone())))
            }
            Layer::MaxPool => {
                let (c, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut y = Vec::with_capacity(c * oh * ow);
                let mut argmax = Vec::with_capacity(c * oh * ow);
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut best = usize::MAX;
                            let mut bv = f64::NEG_INFINITY;
                            for di in 0..POOL {
                                for dj in 0..POOL {
                                    let idx = ch * h * wd + (i * POOL + di) * wd + j * POOL + dj;
                                    if best == usize::MAX || x.data[idx] > bv {
                                        bv = x.data[idx];
                                        best = idx;
                                    }
                                }
                            }
                            y.push(bv);
                            argmax.push(best);
                        }
                    }
                }
                Ok((
                    Tensor {
                        shape: out_shape,
                        data: y,
                    },
                    Cache::Pool {
                        argmax,
                        in_shape: x.shape.clone(),
                    },
                ))
            }
            Layer::Relu => {
                let y = x.data.iter().map(|&v| v.max(0.0)).collect();
                Ok((
                    Tensor {
                        shape: out_shape,
                        data: y,
                    },
                    Cache::Input(x.clone()),
                ))
            }
            Layer::Sigmoid => {
                let y = Tensor {
                    shape: out_shape,
                    data: x.data.iter().map(|&v| sigmoid(v)).collect(),
                };
                Ok((y.clone(), Cache::Output(y)))
            }
            Layer::Softmax => {
                let y = Tensor {
                    shape: out_shape,
                    data: softmax(&x.data),
                };
                Ok((y.clone(), Cache::Output(y)))
            }
            Layer::Dropout { rate } => {
                if !training || *rate == 0.0 {
                    return Ok((x.clone(), Cache::Mask(None)));
                }
                let keep = 1.0 / (1.0 - rate);
                let mask: Vec<f64> = (0..x.len())
                    .map(|_| if rng.gen::<f64>() < *rate { 0.0 } else { keep })
                    .collect();
                let y = x.data.iter().zip(&mask).map(|(a, m)| a * m).collect();
                Ok((
                    Tensor {
                        shape: out_shape,
                        data: y,
                    },
                    Cache::Mask(Some(mask)),
                ))
            }
            Layer::Flatten => Ok((
                Tensor {
                    shape: out_shape,
                    data: x.data.clone(),
                },
                Cache::Shape(x.shape.clone()),
            )),
        }
    }

    /// Gradient with respect to the input and to each parameter (in
    /// [`Layer::params`] order).
    pub fn backward(&self, cache: &Cache, g: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        match (self, cache) {
            (Layer::Dense { w, .. }, Cache::Input(x)) => {
                let (n_out, n_in) = (w.shape[0], w.shape[1]);
                if g.len() != n_out || x.len() != n_in {
                    return Err(stale());
                }
                let mut dx = vec![0.0; n_in];
                let mut dw = vec![0.0; n_out * n_in];
                for (o, &go) in g.data.iter().enumerate() {
                    if go == 0.0 {
                        continue;
                    }
                    let row = &w.data[o * n_in..(o + 1) * n_in];
                    let drow = &mut dw[o * n_in..(o + 1) * n_in];
                    for i in 0..n_in {
                        dx[i] += row[i] * go;
                        drow[i] = go * x.data[i];
                    }
                }
                Ok((
                    Tensor {
                        shape: x.shape.clone(),
                        data: dx,
                    },
                    vec![
                        Tensor {
                            shape: w.shape.clone(),
                            data: dw,
                        },
                        Tensor::vector(g.data.clone()),
                    ],
                ))
            }
            (Layer::Conv2d { w, .. }, Cache::Input(x)) => {
                if g.shape.len() != 3 || g.shape[0] != w.shape[0] || x.shape[1..] != g.shape[1..] {
                    return Err(stale());
                }
                let (dx, dw, db) = conv_backward(w, x, g);
                Ok((dx, vec![dw, db]))
            }
            (Layer::MaxPool, Cache::Pool { argmax, in_shape }) => {
                if argmax.len() != g.len() {
                    return Err(stale());
                }
                let mut dx = Tensor::zeros(in_shape);
                for (&idx, &gv) in argmax.iter().zip(&g.data) {
                    dx.data[idx] += gv;
                }
                Ok((dx, vec![]))
            }
            (Layer::Relu, Cache::Input(x)) => {
                if x.len() != g.len() {
                    return Err(stale());
                }
                let data = x
                    .data
                    .iter()
                    .zip(&g.data)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                Ok((
                    Tensor {
                        shape: x.shape.clone(),
                        data,
                    },
                    vec![],
                ))
            }
            (Layer::Sigmoid, Cache::Output(y)) => {
                if y.len() != g.len() {
                    return Err(stale());
                }
                let data = y.data.iter().zip(&g.data).map(|(&s, &gv)| gv * s * (1.0 - s)).collect();
                Ok((
                    Tensor {
                        shape: y.shape.clone(),
                        data,
                    },
                    vec![],
                ))
            }
            (Layer::Softmax, Cache::Output(y)) => {
                if y.len() != g.len() {
                    return Err(stale());
                }
                let dot: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
                let data = y.data.iter().zip(&g.data).map(|(&s, &gv)| s * (gv - dot)).collect();
                Ok((
                    Tensor {
                        shape: y.shape.clone(),
                        data,
                    },
                    vec![],
                ))
            }
            (Layer::Dropout { .. }, Cache::Mask(mask)) => match mask {
                None => Ok((g.clone(), vec![])),
                Some(m) => {
                    if m.len() != g.len() {
                        return Err(stale());
                    }
                    let data = g.data.iter().zip(m).map(|(a, b)| a * b).collect();
                    Ok((
                        Tensor {
                            shape: g.shape.clone(),
                            data,
                        },
                        vec![],
                    ))
                }
            },
            (Layer::Flatten, Cache::Shape(shape)) => Ok((g.clone().reshaped(shape)?, vec![])),
            _ => Err(stale()),
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Column range `[lo, hi)` of output positions that read input column
/// `j + d − 1` inside the image, for kernel offset `d`.
fn valid_range(d: usize, n: usize) -> (usize, usize) {
    let lo = if d == 0 { 1 } else { 0 };
    let hi = if d == 2 { n - 1 } else { n };
    (lo, hi.max(lo))
}

fn conv_forward(w: &Tensor, b: &Tensor, x: &Tensor) -> Tensor {
    let (co, ci) = (w.shape[0], w.shape[1]);
    let (h, wd) = (x.shape[1], x.shape[2]);
    let plane = h * wd;
    let mut y = vec![0.0; co * plane];
    for o in 0..co {
        let out = &mut y[o * plane..(o + 1) * plane];
        out.iter_mut().for_each(|v| *v = b.data[o]);
        for i in 0..ci {
            let inp = &x.data[i * plane..(i + 1) * plane];
            for ky in 0..KERNEL {
                let (r0, r1) = valid_range(ky, h);
                for kx in 0..KERNEL {
                    let wv = w.data[((o * ci + i) * KERNEL + ky) * KERNEL + kx];
                    let (c0, c1) = valid_range(kx, wd);
                    for r in r0..r1 {
                        let src_r = r + ky - 1;
                        let dst = &mut out[r * wd + c0..r * wd + c1];
                        let src = &inp[src_r * wd + c0 + kx - 1..src_r * wd + c1 + kx - 1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Tensor {
        shape: vec![co, h, wd],
        data: y,
    }
}

fn conv_backward(w: &Tensor, x: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (co, ci) = (w.shape[0], w.shape[1]);
    let (h, wd) = (x.shape[1], x.shape[2]);
    let plane = h * wd;
    let mut dx = vec![0.0; ci * plane];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; co];
    for o in 0..co {
        let go = &g.data[o * plane..(o + 1) * plane];
        db[o] = go.iter().sum();
        for i in 0..ci {
            let inp = &x.data[i * plane..(i + 1) * plane];
            let dinp = &mut dx[i * plane..(i + 1) * plane];
            for ky in 0..KERNEL {
                let (r0, r1) = valid_range(ky, h);
                for kx in 0..KERNEL {
                    let widx = ((o * ci + i) * KERNEL + ky) * KERNEL + kx;
                    let wv = w.data[widx];
                    let (c0, c1) = valid_range(kx, wd);
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        let src_r = r + ky - 1;
                        let gr = &go[r * wd + c0..r * wd + c1];
                        let s0 = src_r * wd + c0 + kx - 1;
                        let s1 = src_r * wd + c1 + kx - 1;
                        acc += gr.iter().zip(&inp[s0..s1]).map(|(a, b)| a * b).sum::<f64>();
                        for (d, gv) in dinp[s0..s1].iter_mut().zip(gr) {
                            *d += wv * gv;
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
    (
        Tensor {
            shape: x.shape.clone(),
            data: dx,
        },
        Tensor {
            shape: w.shape.clone(),
            data: dw,
        },
        Tensor::vector(db),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn dense_identity() {
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data[i * 4] = 1.0;
        }
        let l = Layer::Dense {
            w: eye,
            b: Tensor::zeros(&[3]),
        };
        let x = Tensor::vector(vec![0.5, -2.0, 7.0]);
        let (y, _) = l.forward(&x, false, &mut rng()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_ones_counts_neighbors() {
        let l = Layer::Conv2d {
            w: Tensor {
                shape: vec![1, 1, 3, 3],
                data: vec![1.0; 9],
            },
            b: Tensor::zeros(&[1]),
        };
        let x = Tensor {
            shape: vec![1, 3, 3],
            data: vec![1.0; 9],
        };
        let (y, _) = l.forward(&x, false, &mut rng()).unwrap();
        assert_eq!(y.data, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn softmax_and_pool_examples() {
        let (y, _) = Layer::Softmax
            .forward(&Tensor::vector(vec![0.0, 0.0]), false, &mut rng())
            .unwrap();
        assert_eq!(y.data, vec![0.5, 0.5]);
        let x = Tensor {
            shape: vec![1, 3, 3],
            data: (1..=9).map(f64::from).collect(),
        };
        let (y, _) = Layer::MaxPool.forward(&x, false, &mut rng()).unwrap();
        assert_eq!(y.shape, vec![1, 1, 1]);
        assert_eq!(y.data, vec![9.0]);
    }

    #[test]
    fn pool_floors_dimensions() {
        let x = Tensor::zeros(&[2, 194, 194]);
        assert_eq!(Layer::MaxPool.output_shape(&x.shape).unwrap(), vec![2, 64, 64]);
        assert!(Layer::MaxPool.output_shape(&[1, 2, 5]).is_err());
    }

    #[test]
    fn relu_blocks_negative_gradient() {
        let x = Tensor::vector(vec![-1.0, 2.0, -0.5]);
        let (_, cache) = Layer::Relu.forward(&x, true, &mut rng()).unwrap();
        let (dx, _) = Layer::Relu.backward(&cache, &Tensor::vector(vec![1.0; 3])).unwrap();
        assert_eq!(dx.data, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn dense_weight_gradient_is_outer_product() {
        let mut r = rng();
        let l = Layer::dense(3, 2, Init::Glorot, &mut r);
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let (_, cache) = l.forward(&x, true, &mut r).unwrap();
        let g = Tensor::vector(vec![0.3, -1.5]);
        let (_, grads) = l.backward(&cache, &g).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(grads[0].data[o * 3 + i], g.data[o] * x.data[i]);
            }
        }
        assert_eq!(grads[1].data, g.data);
    }

    #[test]
    fn dropout_only_when_training() {
        let l = Layer::Dropout { rate: 0.5 };
        let x = Tensor::vector(vec![1.0; 1000]);
        let (y, _) = l.forward(&x, false, &mut rng()).unwrap();
        assert_eq!(y, x);
        let (y, cache) = l.forward(&x, true, &mut rng()).unwrap();
        let dropped = y.data.iter().filter(|&&v| v == 0.0).count();
        assert!((400..600).contains(&dropped));
        assert!(y.data.iter().all(|&v| v == 0.0 || v == 2.0));
        let (dx, _) = l.backward(&cache, &x).unwrap();
        assert_eq!(dx, y);
    }

    #[test]
    fn mismatched_inputs_and_caches() {
        let mut r = rng();
        let l = Layer::dense(3, 2, Init::He, &mut r);
        assert!(l.forward(&Tensor::vector(vec![0.0; 4]), false, &mut r).is_err());
        let c = Layer::conv2d(2, 1, Init::He, &mut r);
        assert!(c.forward(&Tensor::zeros(&[1, 4, 4]), false, &mut r).is_err());
        assert!(l
            .backward(&Cache::Shape(vec![3]), &Tensor::vector(vec![0.0; 2]))
            .is_err());
    }

    proptest::proptest! {
        #[test]
        fn softmax_sums_to_one(logits in proptest::collection::vec(-50.0f64..50.0, 2..10)) {
            let s: f64 = softmax(&logits).iter().sum();
            proptest::prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
