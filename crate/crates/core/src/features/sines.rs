use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::wrap_phase;
use crate::error::{Error, Result};

pub const DEFAULT_TERMS: usize = 6;

/// Levenberg-Marquardt controls for [`fit_sum_of_sines_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub starts: usize,
    pub perturb: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            max_iter: 200,
            rel_tol: 1e-10,
            starts: 3,
            perturb: 0.2,
            seed: 0x51_4e5,
        }
    }
}

/// `(a₁, b₁, c₁, …, aₙ, bₙ, cₙ)` of `Σ a sin(b x + c)` on `x ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitCoefficients {
    pub coeffs: Vec<f64>,
    pub rmse: f64,
    /// Set when no start improved on the all-zero model.
    pub flagged: bool,
}

impl FitCoefficients {
    pub fn n_terms(&self) -> usize {
        self.coeffs.len() / 3
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        model_value(&self.coeffs, x)
    }
}

fn model_value(p: &[f64], x: f64) -> f64 {
    p.chunks_exact(3).map(|t| t[0] * (t[1] * x + t[2]).sin()).sum()
}

fn abscissa(len: usize) -> Vec<f64> {
    let d = (len - 1) as f64;
    (0..len).map(|k| k as f64 / d).collect()
}

fn cost(p: &[f64], x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| (model_value(p, xi) - yi).powi(2))
        .sum()
}

/// `JᵀJ` and `Jᵀr` for residual `r = model − y`, accumulated row by row.
fn normal_equations(p: &[f64], x: &[f64], y: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let np = p.len();
    let mut jtj = DMatrix::<f64>::zeros(np, np);
    let mut jtr = DVector::<f64>::zeros(np);
    let mut row = vec![0.0; np];
    for (&xi, &yi) in x.iter().zip(y) {
        let mut m = 0.0;
        for (t, g) in p.chunks_exact(3).zip(row.chunks_exact_mut(3)) {
            let (s, c) = (t[1] * xi + t[2]).sin_cos();
            m += t[0] * s;
            g[0] = s;
            g[1] = t[0] * xi * c;
            g[2] = t[0] * c;
        }
        let r = m - yi;
        for i in 0..np {
            jtr[i] += row[i] * r;
            let gi = row[i];
            for j in i..np {
                jtj[(i, j)] += gi * row[j];
            }
        }
    }
    for i in 0..np {
        for j in 0..i {
            jtj[(i, j)] = jtj[(j, i)];
        }
    }
    (jtj, jtr)
}

/// Damped Gauss-Newton from `p`; returns the refined parameters and cost.
fn levenberg_marquardt(mut p: Vec<f64>, x: &[f64], y: &[f64], opts: &FitOptions) -> (Vec<f64>, f64) {
    let np = p.len();
    let mut c = cost(&p, x, y);
    let mut lambda = opts.lambda0;
    let mut iter = 0;
    while iter < opts.max_iter && c > 0.0 {
        let (jtj, jtr) = normal_equations(&p, x, y);
        let dmax = (0..np).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        if dmax == 0.0 {
            break;
        }
        let floor = dmax * 1e-12;
        let mut improved = false;
        while iter < opts.max_iter {
            iter += 1;
            let mut a = jtj.clone();
            for i in 0..np {
                a[(i, i)] += lambda * jtj[(i, i)].max(floor);
            }
            let step = a.cholesky().map(|ch| ch.solve(&(-&jtr)));
            if let Some(step) = step {
                let cand: Vec<f64> = p.iter().zip(step.iter()).map(|(v, d)| v + d).collect();
                let cc = cost(&cand, x, y);
                if cc.is_finite() && cc < c {
                    let rel = (c - cc) / c;
                    p = cand;
                    c = cc;
                    lambda = (lambda / opts.lambda_down).max(1e-15);
                    improved = true;
                    if rel < opts.rel_tol {
                        return (p, c);
                    }
                    break;
                }
            }
            lambda *= opts.lambda_up;
            if lambda > 1e16 {
                return (p, c);
            }
        }
        if !improved {
            break;
        }
    }
    (p, c)
}

/// Least-squares amplitude and phase of a sinusoid of fixed `b`.
fn project_sine(b: f64, x: &[f64], r: &[f64]) -> (f64, f64) {
    let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&xi, &ri) in x.iter().zip(r) {
        let (s, c) = (b * xi).sin_cos();
        ss += s * s;
        sc += s * c;
        cc += c * c;
        ys += ri * s;
        yc += ri * c;
    }
    let det = ss * cc - sc * sc;
    if det.abs() < 1e-12 * (ss * cc).max(1e-300) {
        return (0.0, 0.0);
    }
    // a·sin(bx + c) = a·cos c·sin(bx) + a·sin c·cos(bx)
    let alpha = (ys * cc - yc * sc) / det;
    let beta = (yc * ss - ys * sc) / det;
    (alpha.hypot(beta), beta.atan2(alpha))
}

/// Angular frequency, in normalized-abscissa units, of the largest
/// periodogram peak of the mean-removed residual.
fn dominant_b(r: &[f64]) -> Option<f64> {
    let len = r.len();
    let mean = r.iter().sum::<f64>() / len as f64;
    let n_fft = (8 * len).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for (b, &v) in buf.iter_mut().zip(r) {
        b.re = v - mean;
    }
    FftPlanner::<f64>::new().plan_fft_forward(n_fft).process(&mut buf);
    let mag: Vec<f64> = buf[..n_fft / 2].iter().map(|v| v.norm()).collect();
    let (k, &peak) = mag.iter().enumerate().skip(1).max_by(|a, b| a.1.total_cmp(b.1))?;
    if peak == 0.0 {
        return None;
    }
    let mut kf = k as f64;
    if k + 1 < mag.len() {
        let (l, c, rr) = (mag[k - 1], mag[k], mag[k + 1]);
        let den = l - 2.0 * c + rr;
        if den != 0.0 {
            kf += (0.5 * (l - rr) / den).clamp(-0.5, 0.5);
        }
    }
    Some(2.0 * PI * kf / n_fft as f64 * (len - 1) as f64)
}

fn residual(p: &[f64], x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(&xi, &yi)| yi - model_value(p, xi)).collect()
}

/// Stagewise start: each new term is seeded at the strongest remaining
/// periodogram peak, then all terms so far are refined jointly. A low
/// frequency term absorbs a dominant offset first.
fn stagewise(x: &[f64], y: &[f64], n_terms: usize, opts: &FitOptions) -> (Vec<f64>, f64) {
    let len = y.len() as f64;
    let energy: f64 = y.iter().map(|v| v * v).sum();
    let mean = y.iter().sum::<f64>() / len;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len).sqrt();
    let mut p: Vec<f64> = Vec::with_capacity(3 * n_terms);
    let mut c = energy;
    for stage in 0..n_terms {
        if c <= energy * 1e-24 {
            break;
        }
        let r = residual(&p, x, y);
        let b = if stage == 0 && mean.abs() > 0.1 * sd {
            PI / 2.0
        } else {
            match dominant_b(&r) {
                Some(b) => b,
                None => break,
            }
        };
        let (a, ph) = project_sine(b, x, &r);
        if a == 0.0 {
            break;
        }
        p.extend_from_slice(&[a, b, ph]);
        (p, c) = levenberg_marquardt(p, x, y, opts);
    }
    p.resize(3 * n_terms, 0.0);
    (p, c)
}

fn canonicalize(p: &mut [f64]) {
    let mut terms: Vec<[f64; 3]> = p
        .chunks_exact(3)
        .map(|t| {
            let (mut a, mut b, mut c) = (t[0], t[1], t[2]);
            if a == 0.0 {
                return [0.0, 0.0, 0.0];
            }
            if b < 0.0 {
                a = -a;
                b = -b;
                c = -c;
            }
            if a < 0.0 {
                a = -a;
                c += PI;
            }
            [a, b, wrap_phase(c)]
        })
        .collect();
    terms.sort_by(|l, r| r[0].total_cmp(&l[0]).then(l[1].total_cmp(&r[1])));
    for (dst, t) in p.chunks_exact_mut(3).zip(terms) {
        dst.copy_from_slice(&t);
    }
}

pub fn fit_sum_of_sines(seq: &[f64], n_terms: usize) -> Result<FitCoefficients> {
    fit_sum_of_sines_with(seq, n_terms, &FitOptions::default())
}

/// Least-squares fit of `Σ a sin(b x + c)` to `seq` sampled on `x = k/(len−1)`.
pub fn fit_sum_of_sines_with(seq: &[f64], n_terms: usize, opts: &FitOptions) -> Result<FitCoefficients> {
    if n_terms == 0 {
        return Err(Error::InvalidInput("at least one term is required".into()));
    }
    let needed = 6 * n_terms;
    if seq.len() < needed {
        return Err(Error::TooShort { needed, got: seq.len() });
    }
    if seq.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sum-of-sines input".into()));
    }
    let x = abscissa(seq.len());
    let zero_cost: f64 = seq.iter().map(|v| v * v).sum();

    let (seed_p, seed_c) = stagewise(&x, seq, n_terms, opts);
    let mut best = (seed_p.clone(), seed_c);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 1..opts.starts {
        let mut p = seed_p.clone();
        for t in p.chunks_exact_mut(3) {
            t[1] *= 1.0 + rng.gen_range(-opts.perturb..=opts.perturb);
        }
        let (p, c) = levenberg_marquardt(p, &x, seq, opts);
        if c < best.1 {
            best = (p, c);
        }
    }

    let n = seq.len() as f64;
    let (mut p, c) = best;
    if !(c < zero_cost) || p.iter().any(|v| !v.is_finite()) {
        return Ok(FitCoefficients {
            coeffs: vec![0.0; 3 * n_terms],
            rmse: (zero_cost / n).sqrt(),
            flagged: true,
        });
    }
    canonicalize(&mut p);
    Ok(FitCoefficients {
        coeffs: p,
        rmse: (c / n).sqrt(),
        flagged: false,
    })
}
