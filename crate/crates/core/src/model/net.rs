use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bundle::{FeatureMask, NetInput, N_COEFFS, N_SHALLOW};
use crate::error::{Error, Result};
use crate::nnet::{concat, split, Cache, Init, Layer, Sequential, Tensor, POOL};

/// Architecture of the fusion network. Widths are the full-size values;
/// `scale_factor` shrinks the convolution, branch and classifier widths
/// (the coefficient DNN keeps its size).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TamperNetConfig {
    pub phase_conv_blocks: usize,
    pub freq_conv_blocks: usize,
    pub conv_filters: Vec<usize>,
    pub coeff_dnn: Vec<usize>,
    pub branch_dense: usize,
    pub classifier_dense: Vec<usize>,
    pub dropout: f64,
    pub m_phase: usize,
    pub m_freq: usize,
    pub scale_factor: f64,
}

impl TamperNetConfig {
    pub fn paper(m_phase: usize, m_freq: usize) -> Self {
        TamperNetConfig {
            phase_conv_blocks: 2,
            freq_conv_blocks: 3,
            conv_filters: vec![32, 64, 128],
            coeff_dnn: vec![32, 32],
            branch_dense: 1024,
            classifier_dense: vec![1024, 256],
            dropout: 0.2,
            m_phase,
            m_freq,
            scale_factor: 1.0,
        }
    }

    pub fn desk(m_phase: usize, m_freq: usize) -> Self {
        TamperNetConfig {
            scale_factor: 0.125,
            ..Self::paper(m_phase, m_freq)
        }
    }

    fn scaled(&self, w: usize) -> usize {
        ((w as f64 * self.scale_factor).round() as usize).max(1)
    }

    pub fn effective_filters(&self) -> Vec<usize> {
        self.conv_filters.iter().map(|&w| self.scaled(w)).collect()
    }

    pub fn effective_branch(&self) -> usize {
        self.scaled(self.branch_dense)
    }

    pub fn effective_classifier(&self) -> Vec<usize> {
        self.classifier_dense.iter().map(|&w| self.scaled(w)).collect()
    }

    pub fn coeff_width(&self) -> usize {
        *self.coeff_dnn.last().unwrap_or(&N_COEFFS)
    }

    /// Length of the fused vector: shallow values plus two branch features.
    pub fn fused_len(&self) -> usize {
        N_SHALLOW + 2 * self.effective_branch()
    }

    /// Spatial size after `blocks` pooling stages.
    pub fn pooled_dim(m: usize, blocks: usize) -> usize {
        (0..blocks).fold(m, |d, _| d / POOL)
    }

    pub fn flatten_len(&self, m: usize, blocks: usize) -> usize {
        let d = Self::pooled_dim(m, blocks);
        d * d * self.effective_filters()[blocks - 1]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.scale_factor > 0.0 && self.scale_factor <= 1.0) {
            return bad(format!("scale factor {} outside (0, 1]", self.scale_factor));
        }
        for (name, blocks, m) in [
            ("phase", self.phase_conv_blocks, self.m_phase),
            ("frequency", self.freq_conv_blocks, self.m_freq),
        ] {
            if blocks == 0 || blocks > self.conv_filters.len() {
                return bad(format!(
                    "{name} branch needs {blocks} blocks but {} filter counts are given",
                    self.conv_filters.len()
                ));
            }
            let need = POOL.pow(blocks as u32);
            if m < need {
                return bad(format!(
                    "{name} matrix of size {m} is too small for {blocks} pooling stages (need ≥ {need})"
                ));
            }
        }
        if self.coeff_dnn.is_empty() || self.classifier_dense.is_empty() {
            return bad("coefficient and classifier stacks need at least one layer".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// The fusion network's parameters, grouped by sub-network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TamperNet {
    pub config: TamperNetConfig,
    pub phase_conv: Sequential,
    pub phase_coef: Sequential,
    pub phase_merge: Sequential,
    pub freq_conv: Sequential,
    pub freq_coef: Sequential,
    pub freq_merge: Sequential,
    pub attention: Sequential,
    pub classifier: Sequential,
}

fn conv_stack(cfg: &TamperNetConfig, blocks: usize, m: usize, rng: &mut dyn RngCore) -> Sequential {
    let filters = cfg.effective_filters();
    let mut layers = Vec::new();
    let mut c_in = 1;
    for &f in filters.iter().take(blocks) {
        layers.push(Layer::conv2d(c_in, f, Init::He, rng));
        layers.push(Layer::Relu);
        layers.push(Layer::conv2d(f, f, Init::He, rng));
        layers.push(Layer::Relu);
        layers.push(Layer::MaxPool);
        c_in = f;
    }
    layers.push(Layer::Flatten);
    layers.push(Layer::dense(
        cfg.flatten_len(m, blocks),
        cfg.effective_branch(),
        Init::He,
        rng,
    ));
    layers.push(Layer::Relu);
    Sequential::new(layers)
}

fn coeff_stack(cfg: &TamperNetConfig, rng: &mut dyn RngCore) -> Sequential {
    let mut layers = Vec::new();
    let mut n_in = N_COEFFS;
    for &w in &cfg.coeff_dnn {
        layers.push(Layer::dense(n_in, w, Init::He, rng));
        layers.push(Layer::Relu);
        n_in = w;
    }
    Sequential::new(layers)
}

fn merge_stack(cfg: &TamperNetConfig, rng: &mut dyn RngCore) -> Sequential {
    let bd = cfg.effective_branch();
    Sequential::new(vec![
        Layer::dense(bd + cfg.coeff_width(), bd, Init::He, rng),
        Layer::Relu,
    ])
}

/// Intermediate state of one forward pass, consumed by [`TamperNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    phase: BranchCache,
    freq: BranchCache,
    z: Tensor,
    attention: Vec<Cache>,
    /// The sigmoid gate applied to the fused vector.
    pub weights: Tensor,
    classifier: Vec<Cache>,
}

#[derive(Debug, Clone)]
struct BranchCache {
    conv: Option<Vec<Cache>>,
    coef: Option<Vec<Cache>>,
    merge: Option<Vec<Cache>>,
}

impl TamperNet {
    pub fn build(cfg: &TamperNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = cfg.fused_len();
        let phase_conv = conv_stack(cfg, cfg.phase_conv_blocks, cfg.m_phase, &mut rng);
        let phase_coef = coeff_stack(cfg, &mut rng);
        let phase_merge = merge_stack(cfg, &mut rng);
        let freq_conv = conv_stack(cfg, cfg.freq_conv_blocks, cfg.m_freq, &mut rng);
        let freq_coef = coeff_stack(cfg, &mut rng);
        let freq_merge = merge_stack(cfg, &mut rng);
        let attention = Sequential::new(vec![
            Layer::dense(l, l, Init::He, &mut rng),
            Layer::Relu,
            Layer::dense(l, l, Init::Glorot, &mut rng),
            Layer::Sigmoid,
        ]);
        let widths = cfg.effective_classifier();
        let mut layers = Vec::new();
        let mut n_in = l;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Layer::dense(n_in, w, Init::He, &mut rng));
            layers.push(Layer::Relu);
            if i == 0 {
                layers.push(Layer::Dropout { rate: cfg.dropout });
            }
            n_in = w;
        }
        layers.push(Layer::dense(n_in, 2, Init::Glorot, &mut rng));
        layers.push(Layer::Softmax);
        Ok(TamperNet {
            config: cfg.clone(),
            phase_conv,
            phase_coef,
            phase_merge,
            freq_conv,
            freq_coef,
            freq_merge,
            attention,
            classifier: Sequential::new(layers),
        })
    }

    fn subnets(&self) -> [&Sequential; 8] {
        [
            &self.phase_conv,
            &self.phase_coef,
            &self.phase_merge,
            &self.freq_conv,
            &self.freq_coef,
            &self.freq_merge,
            &self.attention,
            &self.classifier,
        ]
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.subnets().into_iter().flat_map(|s| s.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        [
            &mut self.phase_conv,
            &mut self.phase_coef,
            &mut self.phase_merge,
            &mut self.freq_conv,
            &mut self.freq_coef,
            &mut self.freq_merge,
            &mut self.attention,
            &mut self.classifier,
        ]
        .into_iter()
        .flat_map(|s| s.params_mut())
        .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn layer_kinds(&self) -> Vec<Vec<&'static str>> {
        self.subnets()
            .iter()
            .map(|s| s.layers.iter().map(|l| l.kind()).collect())
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn branch_forward(
        &self,
        conv: &Sequential,
        coef: &Sequential,
        merge: &Sequential,
        matrix: &Tensor,
        coeffs: &Tensor,
        use_matrix: bool,
        use_coeffs: bool,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor, BranchCache)> {
        let bd = self.config.effective_branch();
        let (conv_out, conv_c) = if use_matrix {
            let (y, c) = conv.forward(matrix, false, rng)?;
            (y, Some(c))
        } else {
            (Tensor::zeros(&[bd]), None)
        };
        let (coef_out, coef_c) = if use_coeffs {
            let (y, c) = coef.forward(coeffs, false, rng)?;
            (y, Some(c))
        } else {
            (Tensor::zeros(&[self.config.coeff_width()]), None)
        };
        if !use_matrix && !use_coeffs {
            return Ok((
                Tensor::zeros(&[bd]),
                BranchCache {
                    conv: None,
                    coef: None,
                    merge: None,
                },
            ));
        }
        let (deep, merge_c) = merge.forward(&concat(&[&conv_out, &coef_out]), false, rng)?;
        Ok((
            deep,
            BranchCache {
                conv: conv_c,
                coef: coef_c,
                merge: Some(merge_c),
            },
        ))
    }

    /// `z ⊙ sigmoid(Dense(relu(Dense(z))))` with `z = [shallow, phase, freq]`.
    pub fn attention_fuse(
        &self,
        shallow: &Tensor,
        deep_phase: &Tensor,
        deep_freq: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let z = concat(&[shallow, deep_phase, deep_freq]);
        let (fused, w, _) = self.fuse(&z)?;
        Ok((fused, w))
    }

    fn fuse(&self, z: &Tensor) -> Result<(Tensor, Tensor, Vec<Cache>)> {
        if z.len() != self.config.fused_len() {
            return Err(Error::Shape(format!(
                "fused vector has {} values, expected {}",
                z.len(),
                self.config.fused_len()
            )));
        }
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let (w, caches) = self.attention.forward(z, false, &mut unused)?;
        let fused = Tensor::vector(z.data.iter().zip(&w.data).map(|(a, b)| a * b).collect());
        Ok((fused, w, caches))
    }

    /// Class probabilities `[genuine, tampered]`.
    pub fn forward(
        &self,
        x: &NetInput,
        mask: &FeatureMask,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor, ForwardCache)> {
        let (deep_phase, phase) = self.branch_forward(
            &self.phase_conv,
            &self.phase_coef,
            &self.phase_merge,
            &x.phase_matrix,
            &x.phase_coeffs,
            mask.phase_matrix,
            mask.phase_coeffs,
            rng,
        )?;
        let (deep_freq, freq) = self.branch_forward(
            &self.freq_conv,
            &self.freq_coef,
            &self.freq_merge,
            &x.freq_matrix,
            &x.freq_coeffs,
            mask.freq_matrix,
            mask.freq_coeffs,
            rng,
        )?;
        let z = concat(&[&x.shallow, &deep_phase, &deep_freq]);
        let (fused, weights, attention) = self.fuse(&z)?;
        let (probs, classifier) = self.classifier.forward(&fused, training, rng)?;
        Ok((
            probs,
            ForwardCache {
                phase,
                freq,
                z,
                attention,
                weights,
                classifier,
            },
        ))
    }

    fn branch_backward(
        conv: &Sequential,
        coef: &Sequential,
        merge: &Sequential,
        cache: &BranchCache,
        g: &Tensor,
        coeff_width: usize,
    ) -> Result<Vec<Tensor>> {
        let zeros = |s: &Sequential| -> Vec<Tensor> { s.params().iter().map(|p| p.zeros_like()).collect() };
        let Some(mc) = &cache.merge else {
            return Ok([zeros(conv), zeros(coef), zeros(merge)].concat());
        };
        let (dcat, gmerge) = merge.backward(mc, g)?;
        let bd = dcat.len() - coeff_width;
        let parts = split(&dcat, &[bd, coeff_width])?;
        let gconv = match &cache.conv {
            Some(c) => conv.backward(c, &parts[0])?.1,
            None => zeros(conv),
        };
        let gcoef = match &cache.coef {
            Some(c) => coef.backward(c, &parts[1])?.1,
            None => zeros(coef),
        };
        Ok([gconv, gcoef, gmerge].concat())
    }

    /// Parameter gradients (aligned with [`Self::params`]) for an upstream
    /// gradient on the output probabilities.
    pub fn backward(&self, cache: &ForwardCache, dprobs: &Tensor) -> Result<Vec<Tensor>> {
        let (dfused, gclass) = self.classifier.backward(&cache.classifier, dprobs)?;
        // fused = z ⊙ w
        let dw = Tensor::vector(dfused.data.iter().zip(&cache.z.data).map(|(a, b)| a * b).collect());
        let (dz_att, gatt) = self.attention.backward(&cache.attention, &dw)?;
        let dz: Vec<f64> = dfused
            .data
            .iter()
            .zip(&cache.weights.data)
            .zip(&dz_att.data)
            .map(|((g, w), d)| g * w + d)
            .collect();
        let bd = self.config.effective_branch();
        let parts = split(&Tensor::vector(dz), &[N_SHALLOW, bd, bd])?;
        let cw = self.config.coeff_width();
        let gphase = Self::branch_backward(
            &self.phase_conv,
            &self.phase_coef,
            &self.phase_merge,
            &cache.phase,
            &parts[1],
            cw,
        )?;
        let gfreq = Self::branch_backward(
            &self.freq_conv,
            &self.freq_coef,
            &self.freq_merge,
            &cache.freq,
            &parts[2],
            cw,
        )?;
        Ok([gphase, gfreq, gatt, gclass].concat())
    }

    /// Copies parameter values from `tensors` (in [`Self::params`] order).
    pub fn load_params(&mut self, tensors: &[Tensor]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} parameter tensors, network has {}",
                tensors.len(),
                params.len()
            )));
        }
        for (p, t) in params.iter_mut().zip(tensors) {
            if p.shape != t.shape {
                return Err(Error::Format(format!(
                    "parameter shape {:?} does not match checkpoint {:?}",
                    p.shape, t.shape
                )));
            }
            p.data.copy_from_slice(&t.data);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{bce_loss, relative_error};
    use rand::Rng;

    pub(crate) fn micro_config() -> TamperNetConfig {
        TamperNetConfig {
            coeff_dnn: vec![4, 3],
            scale_factor: 1.0 / 64.0,
            ..TamperNetConfig::paper(9, 27)
        }
    }

    fn random_input(cfg: &TamperNetConfig, seed: u64) -> NetInput {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut x = NetInput::zeros(cfg.m_phase, cfg.m_freq);
        for t in [
            &mut x.shallow,
            &mut x.phase_matrix,
            &mut x.freq_matrix,
            &mut x.phase_coeffs,
            &mut x.freq_coeffs,
        ] {
            t.data.iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0));
        }
        x
    }

    #[test]
    fn paper_dimensions() {
        let cfg = TamperNetConfig::paper(46, 194);
        assert_eq!(TamperNetConfig::pooled_dim(194, 3), 7);
        assert_eq!(cfg.flatten_len(194, 3), 6272);
        assert_eq!(cfg.flatten_len(46, 2), 1600);
        assert_eq!(cfg.fused_len(), 2051);
        let desk = TamperNetConfig::desk(46, 194);
        assert_eq!(desk.effective_filters(), vec![4, 8, 16]);
        assert_eq!(desk.effective_branch(), 128);
        assert_eq!(desk.effective_classifier(), vec![128, 32]);
    }

    #[test]
    fn rejects_small_matrices() {
        assert!(TamperNet::build(&TamperNetConfig::desk(8, 27), 0).is_err());
        assert!(TamperNet::build(&TamperNetConfig::desk(9, 26), 0).is_err());
        let mut bad = TamperNetConfig::desk(9, 27);
        bad.scale_factor = 1.5;
        assert!(TamperNet::build(&bad, 0).is_err());
    }

    #[test]
    fn same_seed_same_network() {
        let cfg = TamperNetConfig::desk(27, 81);
        let a = TamperNet::build(&cfg, 3).unwrap();
        let b = TamperNet::build(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, TamperNet::build(&cfg, 4).unwrap());
        assert_eq!(a.param_count(), b.param_count());
    }

    #[test]
    fn zero_attention_halves_input() {
        let cfg = micro_config();
        let mut net = TamperNet::build(&cfg, 1).unwrap();
        for p in net.attention.params_mut() {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let bd = cfg.effective_branch();
        let s = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let d = Tensor::vector((0..bd).map(|i| i as f64).collect());
        let (fused, w) = net.attention_fuse(&s, &d, &d).unwrap();
        assert!(w.data.iter().all(|&v| v == 0.5));
        let z = concat(&[&s, &d, &d]);
        for (f, zz) in fused.data.iter().zip(&z.data) {
            assert_eq!(*f, zz / 2.0);
        }
        assert!(net.attention_fuse(&s, &d, &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn probabilities_are_valid_and_deterministic() {
        let cfg = micro_config();
        let net = TamperNet::build(&cfg, 2).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        for seed in 0..5 {
            let x = random_input(&cfg, seed);
            let (p, cache) = net.forward(&x, &FeatureMask::ALL, false, &mut r).unwrap();
            assert!(p.data.iter().all(|&v| v >= 0.0));
            assert!((p.data.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let (q, _) = net.forward(&x, &FeatureMask::ALL, false, &mut r).unwrap();
            assert_eq!(p, q);
            assert!(cache.weights.data.iter().all(|&w| w > 0.0 && w < 1.0));
            for (f, z) in cache.z.data.iter().zip(&cache.weights.data) {
                assert!((f * z).abs() <= f.abs());
            }
        }
        let zero = NetInput::zeros(cfg.m_phase, cfg.m_freq);
        let (p, _) = net.forward(&zero, &FeatureMask::ALL, false, &mut r).unwrap();
        assert!(p.is_finite());
    }

    #[test]
    fn end_to_end_gradient_check() {
        let cfg = micro_config();
        let mut net = TamperNet::build(&cfg, 5).unwrap();
        // small positive biases keep ReLUs away from their kink
        for p in net.params_mut() {
            if p.shape.len() == 1 {
                p.data.iter_mut().for_each(|v| *v = 0.05);
            }
        }
        let x = random_input(&cfg, 9);
        let loss = |n: &TamperNet| {
            let mut r = ChaCha8Rng::seed_from_u64(17);
            let (p, _) = n.forward(&x, &FeatureMask::ALL, true, &mut r).unwrap();
            bce_loss(&p, 1).unwrap().0
        };
        let mut r = ChaCha8Rng::seed_from_u64(17);
        let (p, cache) = net.forward(&x, &FeatureMask::ALL, true, &mut r).unwrap();
        let (_, dp) = bce_loss(&p, 1).unwrap();
        let grads = net.backward(&cache, &dp).unwrap();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let mut probe = net.clone();
        for (pi, g) in grads.iter().enumerate() {
            for k in 0..g.len() {
                let orig = probe.params()[pi].data[k];
                probe.params_mut()[pi].data[k] = orig + eps;
                let up = loss(&probe);
                probe.params_mut()[pi].data[k] = orig - eps;
                let down = loss(&probe);
                probe.params_mut()[pi].data[k] = orig;
                worst = worst.max(relative_error(g.data[k], (up - down) / (2.0 * eps)));
            }
        }
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn masked_branches_get_zero_gradients() {
        let cfg = micro_config();
        let net = TamperNet::build(&cfg, 6).unwrap();
        let x = random_input(&cfg, 1);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let (p, cache) = net.forward(&x, &FeatureMask::SHALLOW_ONLY, true, &mut r).unwrap();
        let (_, dp) = bce_loss(&p, 0).unwrap();
        let grads = net.backward(&cache, &dp).unwrap();
        let n_branch: usize = [&net.phase_conv, &net.phase_coef, &net.phase_merge]
            .iter()
            .map(|s| s.params().len())
            .sum();
        assert!(grads[..2 * n_branch].iter().all(|g| g.data.iter().all(|&v| v == 0.0)));
        assert_eq!(grads.len(), net.params().len());
    }
}
