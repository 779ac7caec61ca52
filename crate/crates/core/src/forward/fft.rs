//! Centered 2D DFT on `M × M` grids: frequency and pixel index `⌊M/2⌋`
//! both sit at the origin.

use num_complex::Complex64;
use rustfft::FftPlanner;

fn transform(data: &mut [Complex64], m: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(m)
    } else {
        planner.plan_fft_forward(m)
    };
    // rows
    fft.process(data);
    // columns
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for c in 0..m {
        for r in 0..m {
            col[r] = data[r * m + c];
        }
        fft.process(&mut col);
        for r in 0..m {
            data[r * m + c] = col[r];
        }
    }
}

fn centered(input: &[Complex64], m: usize, inverse: bool) -> Vec<Complex64> {
    assert_eq!(input.len(), m * m, "grid size");
    let h = m / 2;
    let wrap = |i: usize| (i + m - h) % m;
    let mut buf = vec![Complex64::new(0.0, 0.0); m * m];
    for r in 0..m {
        for c in 0..m {
            buf[wrap(r) * m + wrap(c)] = input[r * m + c];
        }
    }
    transform(&mut buf, m, inverse);
    let mut out = vec![Complex64::new(0.0, 0.0); m * m];
    for p in 0..m {
        for q in 0..m {
            out[p * m + q] = buf[wrap(p) * m + wrap(q)];
        }
    }
    out
}

/// `X[p,q] = Σ x[r,c] exp(−2πi((p−h)(r−h) + (q−h)(c−h))/M)`, unnormalized.
pub fn fft2_centered(x: &[f64], m: usize) -> Vec<Complex64> {
    let input: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    centered(&input, m, false)
}

/// Adjoint of [`fft2_centered`] (positive exponent, no `1/M²`).
pub fn fft2_centered_adjoint(k: &[Complex64], m: usize) -> Vec<Complex64> {
    centered(k, m, true)
}

/// Inverse of [`fft2_centered`].
pub fn ifft2_centered(k: &[Complex64], m: usize) -> Vec<Complex64> {
    let scale = 1.0 / (m * m) as f64;
    centered(k, m, true).into_iter().map(|z| z * scale).collect()
}
