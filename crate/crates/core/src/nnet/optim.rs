use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const PROB_FLOOR: f64 = 1e-12;

/// `−ln p[label]` with the probability clamped to `[1e−12, 1]`, and its
/// gradient with respect to `probs`.
pub fn bce_loss(probs: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    if label >= probs.len() {
        return Err(Error::Shape(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let p = probs.data[label].clamp(PROB_FLOOR, 1.0);
    let mut grad = probs.zeros_like();
    grad.data[label] = -1.0 / p;
    Ok((-p.ln(), grad))
}

/// `lr0 · 0.5^floor(epoch / halve_every)`.
pub fn learning_rate(lr0: f64, epoch: usize, halve_every: usize) -> f64 {
    lr0 * 0.5f64.powi((epoch / halve_every.max(1)) as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| p.zeros_like()).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update. Non-finite gradients abort before
    /// any parameter is touched.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape != g.shape || p.shape != self.m[i].shape {
                return Err(Error::Shape(format!(
                    "parameter {i}: {:?} vs gradient {:?}",
                    p.shape, g.shape
                )));
            }
            if let Some(j) = g.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {i} at element {j} is {}",
                    g.data[j]
                )));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m.data[k] / bc1;
                let vh = v.data[k] / bc2;
                p.data[k] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
