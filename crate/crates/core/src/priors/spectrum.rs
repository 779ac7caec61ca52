//! Stationary image covariance with a power-law spectrum on a periodic grid.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use super::PriorError;

/// Circulant covariance `Λ = Uᴴ diag(S) U` over an `M × M` periodic grid,
/// `U` the unitary 2D DFT and `S(f) ∝ (|f| + f₀)^(−κ)` with `|f|` in
/// cycles per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerSpectrumCov {
    pub m: usize,
    pub kappa: f64,
    pub floor: f64,
    /// Eigenvalues in FFT order (index 0 is DC).
    pub spectrum: Vec<f64>,
}

/// Signed frequency of FFT index `k` on `m` points, cycles per sample.
fn freq(k: usize, m: usize) -> f64 {
    let s = if k <= m / 2 { k as f64 } else { k as f64 - m as f64 };
    s / m as f64
}

/// Spectral density scaled so every pixel has variance `variance`.
pub fn build_power_spectrum_cov(m: usize, kappa: f64, floor: f64, variance: f64) -> Result<PowerSpectrumCov, PriorError> {
    if m < 2 || !(kappa >= 0.0) || !(floor > 0.0) || !(variance > 0.0) {
        return Err(PriorError::InvalidParameter(format!(
            "power spectrum needs M ≥ 2, κ ≥ 0, f₀ > 0, variance > 0 (got {m}, {kappa}, {floor}, {variance})"
        )));
    }
    let mut spectrum = Vec::with_capacity(m * m);
    for p in 0..m {
        for q in 0..m {
            let f = freq(p, m).hypot(freq(q, m));
            spectrum.push((f + floor).powf(-kappa));
        }
    }
    // pixel variance = mean eigenvalue
    let mean = spectrum.iter().sum::<f64>() / spectrum.len() as f64;
    spectrum.iter_mut().for_each(|s| *s *= variance / mean);
    Ok(PowerSpectrumCov {
        m,
        kappa,
        floor,
        spectrum,
    })
}

fn fft2(data: &mut [Complex64], m: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(m)
    } else {
        planner.plan_fft_forward(m)
    };
    fft.process(data);
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

impl PowerSpectrumCov {
    pub fn dim(&self) -> usize {
        self.m * self.m
    }

    /// Autocovariance at pixel offset `(dr, dc)`.
    fn autocov(&self) -> Vec<f64> {
        let m = self.m;
        let mut buf: Vec<Complex64> = self.spectrum.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        fft2(&mut buf, m, true);
        buf.iter().map(|z| z.re / (m * m) as f64).collect()
    }

    /// Dense `M² × M²` matrix.
    pub fn dense(&self) -> DMatrix<f64> {
        let m = self.m;
        let c = self.autocov();
        let d = self.dim();
        let mut out = DMatrix::zeros(d, d);
        for i in 0..d {
            let (ri, ci) = (i / m, i % m);
            for j in 0..d {
                let (rj, cj) = (j / m, j % m);
                let dr = (ri + m - rj) % m;
                let dc = (ci + m - cj) % m;
                out[(i, j)] = c[dr * m + dc];
            }
        }
        out
    }

    /// One zero-mean draw `Uᴴ √S U w`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let m = self.m;
        let mut buf: Vec<Complex64> = (0..m * m)
            .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
            .collect();
        fft2(&mut buf, m, false);
        for (z, s) in buf.iter_mut().zip(&self.spectrum) {
            *z *= s.sqrt();
        }
        fft2(&mut buf, m, true);
        buf.iter().map(|z| z.re / (m * m) as f64).collect()
    }
}
