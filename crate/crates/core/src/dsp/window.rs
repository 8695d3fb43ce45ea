use std::f64::consts::PI;

/// Symmetric Hanning window without zero end taps:
/// `w[n] = 0.5 (1 − cos(2π (n+1) / (len+1)))`, so `Σ w = (len + 1) / 2`.
pub fn hanning(len: usize) -> Vec<f64> {
    let denom = (len + 1) as f64;
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * (n + 1) as f64 / denom).cos()))
        .collect()
}

/// Zeroth-order modified Bessel function of the first kind (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= (half / k) * (half / k);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        k += 1.0;
    }
    sum
}

/// Symmetric Kaiser window of `len` taps.
pub fn kaiser(len: usize, beta: f64) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = bessel_i0(beta);
    let m = (len - 1) as f64;
    (0..len)
        .map(|n| {
            let r = 2.0 * n as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

/// Kaiser's empirical β for a stopband attenuation in dB.
pub fn kaiser_beta(atten_db: f64) -> f64 {
    if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hanning_sum_closed_form() {
        for len in [2usize, 7, 200, 240] {
            let s: f64 = hanning(len).iter().sum();
            assert!((s - (len as f64 + 1.0) / 2.0).abs() < 1e-9, "len {len}");
        }
    }

    #[test]
    fn hanning_symmetric_and_positive() {
        let w = hanning(200);
        for i in 0..200 {
            assert!((w[i] - w[199 - i]).abs() < 1e-14);
            assert!(w[i] > 0.0);
        }
    }

    #[test]
    fn bessel_known_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        // I0(1) and I0(5) reference values
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_442).abs() < 1e-10);
    }

    #[test]
    fn kaiser_endpoints() {
        let w = kaiser(11, 8.0);
        assert!((w[5] - 1.0).abs() < 1e-15);
        assert!((w[0] - 1.0 / bessel_i0(8.0)).abs() < 1e-15);
    }
}
