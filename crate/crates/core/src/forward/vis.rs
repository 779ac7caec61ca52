use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::array::UVCoverage;
use super::grid::ImageGrid;
use super::ForwardError;
use crate::diffcore::{gemm, RowError, RowFunction};

/// Dense `K × M²` Fourier sampling matrix stored as separate real and
/// imaginary row-major blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct DftMatrix {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

/// Row `k` holds `exp(−2πi (u_k l + v_k m))` over pixel centers.
pub fn build_dft_matrix(grid: &ImageGrid, uv: &[(f64, f64)]) -> DftMatrix {
    let n = grid.dim();
    let mut re = Vec::with_capacity(uv.len() * n);
    let mut im = Vec::with_capacity(uv.len() * n);
    for &(u, v) in uv {
        for row in 0..grid.m {
            for col in 0..grid.m {
                let (l, m) = grid.pixel(row, col);
                let (s, c) = (-2.0 * PI * (u * l + v * m)).sin_cos();
                re.push(c);
                im.push(s);
            }
        }
    }
    DftMatrix {
        rows: uv.len(),
        cols: n,
        re,
        im,
    }
}

impl DftMatrix {
    pub fn from_coverage(grid: &ImageGrid, coverage: &UVCoverage) -> Self {
        build_dft_matrix(grid, &coverage.uv())
    }

    pub fn n_vis(&self) -> usize {
        self.rows
    }

    pub fn n_pixels(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, k: usize, j: usize) -> Complex64 {
        Complex64::new(self.re[k * self.cols + j], self.im[k * self.cols + j])
    }

    pub fn real_part(&self) -> &[f64] {
        &self.re
    }

    pub fn imag_part(&self) -> &[f64] {
        &self.im
    }

    pub fn apply(&self, x: &[f64]) -> Vec<Complex64> {
        let (re, im) = self.apply_batch(x, 1);
        re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect()
    }

    /// `X Fᵀ` for a `rows × M²` batch; returns real and imaginary `rows × K` blocks.
    pub fn apply_batch(&self, x: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(x.len(), rows * self.cols, "image batch shape");
        let mut re = vec![0.0; rows * self.rows];
        let mut im = vec![0.0; rows * self.rows];
        gemm(rows, self.cols, self.rows, x, false, &self.re, true, &mut re, false);
        gemm(rows, self.cols, self.rows, x, false, &self.im, true, &mut im, false);
        (re, im)
    }

    /// Pulls visibility-space gradients back to pixels: `G_re F_re + G_im F_im`.
    pub fn adjoint_batch(&self, g_re: &[f64], g_im: &[f64], rows: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * self.cols];
        gemm(rows, self.rows, self.cols, g_re, false, &self.re, false, &mut out, false);
        gemm(rows, self.rows, self.cols, g_im, false, &self.im, false, &mut out, true);
        out
    }
}

/// Observed complex visibilities, one per coverage row.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilitySet {
    pub coverage: UVCoverage,
    pub vis: Vec<Complex64>,
}

impl VisibilitySet {
    pub fn new(coverage: UVCoverage, vis: Vec<Complex64>) -> Result<Self, ForwardError> {
        if coverage.len() != vis.len() {
            return Err(ForwardError::Dimension {
                expected: coverage.len(),
                got: vis.len(),
            });
        }
        Ok(Self { coverage, vis })
    }
}

/// Per-station, per-scan complex gain corruptions `g exp(iφ)`; stations
/// without an entry are ideal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StationGains {
    entries: HashMap<(u64, usize), (f64, f64)>,
}

impl StationGains {
    pub fn set(&mut self, t: f64, station: usize, gain: f64, phase: f64) {
        self.entries.insert((t.to_bits(), station), (gain, phase));
    }

    /// `(g, φ)` at scan `t`.
    pub fn get(&self, t: f64, station: usize) -> (f64, f64) {
        self.entries
            .get(&(t.to_bits(), station))
            .copied()
            .unwrap_or((1.0, 0.0))
    }

    /// Independent gains uniform in `gain_range` and phases uniform in
    /// `(−π, π]` for every station at every scan of `coverage`.
    pub fn random(coverage: &UVCoverage, gain_range: (f64, f64), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Self::default();
        let mut times: Vec<f64> = coverage.rows.iter().map(|r| r.t).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        for t in times {
            for s in 0..coverage.n_stations() {
                let g = rng.gen_range(gain_range.0..=gain_range.1);
                let phi = PI - rng.gen_range(0.0..2.0 * PI);
                out.set(t, s, g, phi);
            }
        }
        out
    }
}

/// `V = g_a g_b exp(−i(φ_a − φ_b)) F x + n`, `n` complex Gaussian with
/// per-component std `σ_ab`. `noise_seed = None` gives noiseless data.
pub fn simulate_visibilities(
    x: &[f64],
    f: &DftMatrix,
    coverage: &UVCoverage,
    gains: &StationGains,
    noise_seed: Option<u64>,
) -> Result<VisibilitySet, ForwardError> {
    if x.len() != f.n_pixels() {
        return Err(ForwardError::Dimension {
            expected: f.n_pixels(),
            got: x.len(),
        });
    }
    if coverage.len() != f.n_vis() {
        return Err(ForwardError::Dimension {
            expected: f.n_vis(),
            got: coverage.len(),
        });
    }
    let clean = f.apply(x);
    let mut rng = noise_seed.map(ChaCha8Rng::seed_from_u64);
    let vis = coverage
        .rows
        .iter()
        .zip(clean)
        .map(|(row, v)| {
            let (ga, pa) = gains.get(row.t, row.a);
            let (gb, pb) = gains.get(row.t, row.b);
            let mut out = v * Complex64::from_polar(ga * gb, -(pa - pb));
            if let Some(rng) = rng.as_mut() {
                let nr: f64 = rng.sample(StandardNormal);
                let ni: f64 = rng.sample(StandardNormal);
                out += Complex64::new(row.sigma * nr, row.sigma * ni);
            }
            out
        })
        .collect();
    VisibilitySet::new(coverage.clone(), vis)
}

/// `½ (y − Fx)ᵀ Σ⁻¹ (y − Fx)` over stacked real and imaginary parts.
pub fn chi2_vis(x: &[f64], y: &VisibilitySet, f: &DftMatrix) -> Result<f64, ForwardError> {
    if x.len() != f.n_pixels() || y.vis.len() != f.n_vis() {
        return Err(ForwardError::Dimension {
            expected: f.n_pixels(),
            got: x.len(),
        });
    }
    let model = f.apply(x);
    Ok(0.5
        * y.vis
            .iter()
            .zip(&model)
            .zip(&y.coverage.rows)
            .map(|((o, m), row)| (o - m).norm_sqr() / (row.sigma * row.sigma))
            .sum::<f64>())
}

/// Visibility data-fit term as a differentiable per-image function.
pub struct VisLikelihood {
    f: DftMatrix,
    y_re: Vec<f64>,
    y_im: Vec<f64>,
    inv_var: Vec<f64>,
}

impl VisLikelihood {
    pub fn new(y: &VisibilitySet, f: DftMatrix) -> Result<Self, ForwardError> {
        if y.vis.len() != f.n_vis() {
            return Err(ForwardError::Dimension {
                expected: f.n_vis(),
                got: y.vis.len(),
            });
        }
        Ok(Self {
            y_re: y.vis.iter().map(|v| v.re).collect(),
            y_im: y.vis.iter().map(|v| v.im).collect(),
            inv_var: y.coverage.rows.iter().map(|r| 1.0 / (r.sigma * r.sigma)).collect(),
            f,
        })
    }

    pub fn dft(&self) -> &DftMatrix {
        &self.f
    }

    /// Number of real data terms (two per visibility).
    pub fn n_terms(&self) -> usize {
        2 * self.y_re.len()
    }

    fn eval(&self, x: &[f64], cols: usize, out: &mut [f64], grad: Option<&mut [f64]>) -> Result<(), (usize, RowError)> {
        if cols != self.f.n_pixels() {
            return Err((0, RowError(format!("expected {} pixels, got {cols}", self.f.n_pixels()))));
        }
        let rows = out.len();
        let k = self.f.n_vis();
        let (mut re, mut im) = self.f.apply_batch(x, rows);
        for r in 0..rows {
            let mut acc = 0.0;
            for j in 0..k {
                let dr = re[r * k + j] - self.y_re[j];
                let di = im[r * k + j] - self.y_im[j];
                acc += (dr * dr + di * di) * self.inv_var[j];
                // residual gradient, reused in place
                re[r * k + j] = dr * self.inv_var[j];
                im[r * k + j] = di * self.inv_var[j];
            }
            out[r] = 0.5 * acc;
        }
        if let Some(grad) = grad {
            grad.copy_from_slice(&self.f.adjoint_batch(&re, &im, rows));
        }
        Ok(())
    }
}

impl RowFunction for VisLikelihood {
    fn name(&self) -> &str {
        "chi2_vis"
    }

    fn value(&self, row: &[f64]) -> Result<f64, RowError> {
        let mut out = [0.0];
        self.eval(row, row.len(), &mut out, None).map_err(|e| e.1)?;
        Ok(out[0])
    }

    fn value_and_grad(&self, row: &[f64], grad: &mut [f64]) -> Result<f64, RowError> {
        let mut out = [0.0];
        self.eval(row, row.len(), &mut out, Some(grad)).map_err(|e| e.1)?;
        Ok(out[0])
    }

    fn batch_value(&self, x: &[f64], cols: usize, out: &mut [f64]) -> Result<(), (usize, RowError)> {
        self.eval(x, cols, out, None)
    }

    fn batch_value_and_grad(&self, x: &[f64], cols: usize, out: &mut [f64], grad: &mut [f64]) -> Result<(), (usize, RowError)> {
        self.eval(x, cols, out, Some(grad))
    }
}
