//! Elliptic (Cauer) low-pass design and second-order-section filtering.
//!
//! The analog prototype follows the classical construction from Jacobi
//! elliptic functions: the selectivity modulus comes from the degree
//! equation (solved through nomes), zeros sit at `i / (k sn(jK/N))`, and the
//! pole offset `v0` is the inverse `sc` of `1/ε`. The prototype is scaled to
//! a pre-warped cutoff and mapped through the bilinear transform.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

const EPS: f64 = 2.220_446_049_250_313e-16;

fn agm(mut a: f64, mut b: f64) -> f64 {
    for _ in 0..64 {
        if (a - b).abs() <= EPS * a {
            break;
        }
        let an = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = an;
    }
    a
}

/// Complete elliptic integral of the first kind, parameter `m = k²`.
fn ellipk(m: f64) -> f64 {
    PI / (2.0 * agm(1.0, (1.0 - m).sqrt()))
}

/// `K(1 − p)`, accurate for small `p`.
fn ellipk_complement(p: f64) -> f64 {
    PI / (2.0 * agm(1.0, p.sqrt()))
}

/// Jacobi elliptic functions `(sn, cn, dn)` by descending Landen/AGM.
fn ellipj(u: f64, m: f64) -> (f64, f64, f64) {
    if m < 1e-12 {
        return (u.sin(), u.cos(), 1.0);
    }
    if m > 1.0 - 1e-12 {
        let sech = 1.0 / u.cosh();
        return (u.tanh(), sech, sech);
    }
    let mut a = [0.0f64; 16];
    let mut c = [0.0f64; 16];
    a[0] = 1.0;
    c[0] = m.sqrt();
    let mut b = (1.0 - m).sqrt();
    let mut twon = 1.0;
    let mut i = 0;
    while (c[i] / a[i]).abs() > EPS && i < 15 {
        let ai = a[i];
        i += 1;
        c[i] = 0.5 * (ai - b);
        let t = (ai * b).sqrt();
        a[i] = 0.5 * (ai + b);
        b = t;
        twon *= 2.0;
    }
    let mut phi = twon * a[i] * u;
    let mut prev = phi;
    while i > 0 {
        let t = c[i] * phi.sin() / a[i];
        prev = phi;
        phi = 0.5 * (t.asin() + phi);
        i -= 1;
    }
    let cn = phi.cos();
    (phi.sin(), cn, cn / (phi - prev).cos())
}

/// Solves the degree equation for the selectivity parameter.
fn ellipdeg(n: usize, m1: f64) -> f64 {
    const MMAX: i32 = 7;
    let k1 = ellipk(m1);
    let k1p = ellipk_complement(m1);
    let q1 = (-PI * k1p / k1).exp();
    let q = q1.powf(1.0 / n as f64);
    let num: f64 = (0..=MMAX).map(|k| q.powi(k * (k + 1))).sum();
    let den: f64 = 1.0 + 2.0 * (1..=MMAX + 1).map(|k| q.powi(k * k)).sum::<f64>();
    16.0 * q * (num / den).powi(4)
}

fn complement(kx: Complex64) -> Complex64 {
    ((Complex64::new(1.0, 0.0) - kx) * (Complex64::new(1.0, 0.0) + kx)).sqrt()
}

/// Inverse Jacobi `sn` for complex argument via Landen transformations.
fn arc_jac_sn(w: Complex64, m: f64) -> Complex64 {
    let k = m.sqrt();
    let mut ks = vec![k];
    while *ks.last().unwrap() != 0.0 && ks.len() < 12 {
        let kk = *ks.last().unwrap();
        let kp = ((1.0 - kk) * (1.0 + kk)).sqrt();
        ks.push((1.0 - kp) / (1.0 + kp));
    }
    let big_k: f64 = ks[1..].iter().map(|v| 1.0 + v).product::<f64>() * PI / 2.0;
    let mut wn = w;
    for pair in ks.windows(2) {
        let (kn, knext) = (pair[0], pair[1]);
        wn = 2.0 * wn / ((1.0 + knext) * (Complex64::new(1.0, 0.0) + complement(kn * wn)));
    }
    big_k * (2.0 / PI) * wn.asin()
}

fn arc_jac_sc1(w: f64, m: f64) -> f64 {
    arc_jac_sn(Complex64::new(0.0, w), m).im
}

/// Normalized analog elliptic prototype (passband edge 1 rad/s).
fn ellipap(order: usize, rp: f64, rs: f64) -> (Vec<Complex64>, Vec<Complex64>, f64) {
    let eps_sq = 10f64.powf(0.1 * rp) - 1.0;
    if order == 1 {
        let p = -(1.0 / eps_sq).sqrt();
        return (Vec::new(), vec![Complex64::new(p, 0.0)], -p);
    }
    let eps = eps_sq.sqrt();
    let ck1_sq = eps_sq / (10f64.powf(0.1 * rs) - 1.0);
    let val0 = ellipk(ck1_sq);
    let m = ellipdeg(order, ck1_sq);
    let capk = ellipk(m);

    let js: Vec<usize> = (1 - order % 2..order).step_by(2).collect();
    let sncd: Vec<(f64, f64, f64)> = js.iter().map(|&j| ellipj(j as f64 * capk / order as f64, m)).collect();

    let mut zeros = Vec::new();
    for &(s, _, _) in &sncd {
        if s.abs() > EPS {
            zeros.push(Complex64::new(0.0, 1.0 / (m.sqrt() * s)));
        }
    }
    let conj: Vec<Complex64> = zeros.iter().map(|z| z.conj()).collect();
    zeros.extend(conj);

    let r = arc_jac_sc1(1.0 / eps, ck1_sq);
    let v0 = capk * r / (order as f64 * val0);
    let (sv, cv, dv) = ellipj(v0, 1.0 - m);

    let mut poles: Vec<Complex64> = sncd
        .iter()
        .map(|&(s, c, d)| {
            let denom = 1.0 - (d * sv).powi(2);
            -Complex64::new(c * d * sv * cv, s * dv) / denom
        })
        .collect();
    let extra: Vec<Complex64> = if order % 2 == 1 {
        let norm: f64 = poles.iter().map(|p| p.norm_sqr()).sum::<f64>().sqrt();
        poles
            .iter()
            .filter(|p| p.im.abs() > EPS * norm)
            .map(|p| p.conj())
            .collect()
    } else {
        poles.iter().map(|p| p.conj()).collect()
    };
    poles.extend(extra);

    let prod_p = poles.iter().fold(Complex64::new(1.0, 0.0), |acc, p| acc * (-p));
    let prod_z = zeros.iter().fold(Complex64::new(1.0, 0.0), |acc, z| acc * (-z));
    let mut gain = (prod_p / prod_z).re;
    if order % 2 == 0 {
        gain /= (1.0 + eps_sq).sqrt();
    }
    (zeros, poles, gain)
}

/// One biquad, `b = [b0, b1, b2]`, `a = [1, a1, a2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Sos {
    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Magnitude response at normalized angular frequency `w` (rad/sample).
    fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (self.a[0] + self.a[1] * z1 + self.a[2] * z2)
    }
}

/// Cascade of second-order sections, realized in transposed direct form II.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Sos>,
}

impl SosFilter {
    pub fn magnitude(&self, freq_hz: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / sample_rate;
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(w))
            .norm()
    }

    /// Causal filtering with section states initialized to the steady state
    /// of a constant input equal to `x[0]`, so a constant input yields a
    /// constant output from the first sample.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        let Some(&x0) = x.first() else {
            return out;
        };
        let mut level = x0;
        for sec in &self.sections {
            let g = sec.dc_gain();
            let y = g * level;
            let mut s2 = sec.b[2] * level - sec.a[2] * y;
            let mut s1 = sec.b[1] * level - sec.a[1] * y + s2;
            for v in out.iter_mut() {
                let xin = *v;
                let yout = sec.b[0] * xin + s1;
                s1 = sec.b[1] * xin - sec.a[1] * yout + s2;
                s2 = sec.b[2] * xin - sec.a[2] * yout;
                *v = yout;
            }
            level = y;
        }
        out
    }
}

/// Digital elliptic low-pass: `order` poles, passband ripple `rp` dB,
/// stopband attenuation `rs` dB, passband edge `cutoff_hz`.
pub fn ellip_lowpass(order: usize, rp: f64, rs: f64, cutoff_hz: f64, sample_rate: f64) -> Result<SosFilter> {
    if order == 0 || rp <= 0.0 || rs <= rp {
        return Err(Error::InvalidInput(format!(
            "elliptic design needs order ≥ 1 and 0 < rp < rs (got {order}, {rp}, {rs})"
        )));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate / 2.0) {
        return Err(Error::InvalidInput(format!(
            "cutoff {cutoff_hz} Hz outside (0, {})",
            sample_rate / 2.0
        )));
    }
    let (z, p, k) = ellipap(order, rp, rs);

    // Pre-warp on the unit-sampling-rate convention (fs = 2).
    let fs = 2.0;
    let wn = 2.0 * cutoff_hz / sample_rate;
    let warped = 2.0 * fs * (PI * wn / fs).tan();
    let z: Vec<Complex64> = z.iter().map(|v| v * warped).collect();
    let p: Vec<Complex64> = p.iter().map(|v| v * warped).collect();
    let k = k * warped.powi(p.len() as i32 - z.len() as i32);

    let fs2 = Complex64::new(2.0 * fs, 0.0);
    let mut zd: Vec<Complex64> = z.iter().map(|v| (fs2 + v) / (fs2 - v)).collect();
    let pd: Vec<Complex64> = p.iter().map(|v| (fs2 + v) / (fs2 - v)).collect();
    zd.extend(std::iter::repeat(Complex64::new(-1.0, 0.0)).take(p.len() - z.len()));
    let num = z.iter().fold(Complex64::new(1.0, 0.0), |acc, v| acc * (fs2 - v));
    let den = p.iter().fold(Complex64::new(1.0, 0.0), |acc, v| acc * (fs2 - v));
    let kd = k * (num / den).re;

    Ok(SosFilter {
        sections: pair_sections(zd, pd, kd),
    })
}

/// Groups conjugate pole pairs with their nearest conjugate zero pairs; the
/// remaining real pole/zero share a first-order section.
fn pair_sections(zeros: Vec<Complex64>, poles: Vec<Complex64>, gain: f64) -> Vec<Sos> {
    let tol = 1e-10;
    let mut cpoles: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > tol).collect();
    let rpoles: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= tol).map(|p| p.re).collect();
    let mut czeros: Vec<Complex64> = zeros.iter().copied().filter(|z| z.im > tol).collect();
    let mut rzeros: Vec<f64> = zeros.iter().filter(|z| z.im.abs() <= tol).map(|z| z.re).collect();

    // Poles closest to the unit circle first.
    cpoles.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());

    let mut sections = Vec::new();
    for p in cpoles {
        let a = [1.0, -2.0 * p.re, p.norm_sqr()];
        let b = if czeros.is_empty() {
            match (rzeros.pop(), rzeros.pop()) {
                (Some(z1), Some(z2)) => [1.0, -(z1 + z2), z1 * z2],
                (Some(z1), None) => [1.0, -z1, 0.0],
                _ => [1.0, 0.0, 0.0],
            }
        } else {
            let (idx, _) = czeros
                .iter()
                .enumerate()
                .min_by(|(_, x), (_, y)| (*x - p).norm().partial_cmp(&(*y - p).norm()).unwrap())
                .unwrap();
            let z = czeros.swap_remove(idx);
            [1.0, -2.0 * z.re, z.norm_sqr()]
        };
        sections.push(Sos { b, a });
    }
    let mut rp = rpoles.into_iter();
    while let Some(p1) = rp.next() {
        let p2 = rp.next();
        let a = match p2 {
            Some(p2) => [1.0, -(p1 + p2), p1 * p2],
            None => [1.0, -p1, 0.0],
        };
        let b = match (rzeros.pop(), if p2.is_some() { rzeros.pop() } else { None }) {
            (Some(z1), Some(z2)) => [1.0, -(z1 + z2), z1 * z2],
            (Some(z1), None) => [1.0, -z1, 0.0],
            _ => [1.0, 0.0, 0.0],
        };
        sections.push(Sos { b, a });
    }
    if let Some(first) = sections.first_mut() {
        for v in first.b.iter_mut() {
            *v *= gain;
        }
    }
    sections
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ellipk_reference() {
        // K(0) = π/2, K(0.5) = 1.854074677301372
        assert!((ellipk(0.0) - PI / 2.0).abs() < 1e-15);
        assert!((ellipk(0.5) - 1.854_074_677_301_372).abs() < 1e-13);
    }

    #[test]
    fn ellipj_reference() {
        // sn, cn, dn at u = 0.5, m = 0.3
        let (s, c, d) = ellipj(0.5, 0.3);
        assert!((s * s + c * c - 1.0).abs() < 1e-14);
        assert!((c - 0.880_408_736_426_462_4).abs() < 1e-12);
        assert!((d - 0.965_678_964_745_951_2).abs() < 1e-12);
        assert!((d * d + 0.3 * s * s - 1.0).abs() < 1e-14);
        assert!((s - 0.474_215_622_711_820_66).abs() < 1e-12);
    }

    #[test]
    fn prototype_matches_reference_poles() {
        // Analog prototype for order 5, 0.5 dB ripple, 64 dB stopband.
        let (z, p, k) = ellipap(5, 0.5, 64.0);
        assert_eq!(z.len(), 4);
        assert_eq!(p.len(), 5);
        let want_p = [
            (-0.395_771_34, 0.0),
            (-0.289_868_81, 0.667_762_5),
            (-0.094_784_12, 1.012_343_85),
        ];
        for (re, im) in want_p {
            assert!(
                p.iter().any(|q| (q.re - re).abs() < 1e-6 && (q.im - im).abs() < 1e-6),
                "missing pole {re}+{im}i in {p:?}"
            );
        }
        for im in [3.105_344_37, 2.003_436_41] {
            assert!(z.iter().any(|q| q.re.abs() < 1e-12 && (q.im - im).abs() < 1e-6));
        }
        assert!((k - 0.005_601_952_183_453_232).abs() < 1e-9);
    }
}
