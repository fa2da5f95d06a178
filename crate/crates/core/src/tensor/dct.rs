//! Orthonormal DCT-II / DCT-III computed through a single complex FFT of
//! the even/odd reordered input (Makhoul's N-point algorithm).

use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::ensure_finite;
use crate::error::Result;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn scale(k: usize, n: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

/// Orthonormal DCT-II: `X[k] = s_k Σ x[n] cos(π (2n+1) k / 2N)`.
pub fn dct2(x: &[f64]) -> Result<Vec<f64>> {
    ensure_finite(x, "dct2 input")?;
    let n = x.len();
    if n == 1 {
        return Ok(x.to_vec());
    }

    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (k, pair) in x.chunks(2).enumerate() {
        buf[k] = Complex64::new(pair[0], 0.0);
        if let Some(&odd) = pair.get(1) {
            buf[n - 1 - k] = Complex64::new(odd, 0.0);
        }
    }

    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    fft.process(&mut buf);

    let out = buf
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let twiddle = Complex64::from_polar(1.0, -PI * k as f64 / (2.0 * n as f64));
            (v * twiddle).re * scale(k, n)
        })
        .collect();
    Ok(out)
}

/// Inverse of [`dct2`] (orthonormal DCT-III).
pub fn idct2(c: &[f64]) -> Result<Vec<f64>> {
    ensure_finite(c, "idct2 input")?;
    let n = c.len();
    if n == 1 {
        return Ok(c.to_vec());
    }

    let unscaled: Vec<f64> = c.iter().enumerate().map(|(k, v)| v / scale(k, n)).collect();
    let mut buf: Vec<Complex64> = (0..n)
        .map(|k| {
            let mirror = if k == 0 { 0.0 } else { unscaled[n - k] };
            let twiddle = Complex64::from_polar(1.0, PI * k as f64 / (2.0 * n as f64));
            twiddle * Complex64::new(unscaled[k], -mirror)
        })
        .collect();

    let ifft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n));
    ifft.process(&mut buf);

    let norm = 1.0 / n as f64;
    let mut out = vec![0.0; n];
    for k in 0..n.div_ceil(2) {
        out[2 * k] = buf[k].re * norm;
    }
    for k in 0..n / 2 {
        out[2 * k + 1] = buf[n - 1 - k].re * norm;
    }
    Ok(out)
}
