//! Masked centered-Fourier sampling for compressed-sensing MRI.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::fft::{fft2_centered, fft2_centered_adjoint};
use super::ForwardError;
use crate::diffcore::{RowError, RowFunction};

/// Default k-space noise std as a fraction of the DC magnitude.
pub const DEFAULT_NOISE_FRACTION: f64 = 0.0004;

/// `M × M` k-space sampling pattern, DC at `(⌊M/2⌋, ⌊M/2⌋)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MriMask {
    pub m: usize,
    pub mask: Vec<bool>,
}

impl MriMask {
    pub fn new(m: usize, mask: Vec<bool>) -> Result<Self, ForwardError> {
        if m < 2 || mask.len() != m * m {
            return Err(ForwardError::InvalidMask(format!(
                "mask of {} entries does not fit an {m}×{m} grid",
                mask.len()
            )));
        }
        if !mask.iter().any(|&b| b) {
            return Err(ForwardError::InvalidMask("mask samples nothing".into()));
        }
        Ok(Self { m, mask })
    }

    pub fn full(m: usize) -> Self {
        Self {
            m,
            mask: vec![true; m * m],
        }
    }

    pub fn dc_only(m: usize) -> Self {
        let mut mask = vec![false; m * m];
        mask[(m / 2) * m + m / 2] = true;
        Self { m, mask }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// `M² / samples`.
    pub fn acceleration(&self) -> f64 {
        (self.m * self.m) as f64 / self.count() as f64
    }

    /// Row-major indices of sampled locations.
    pub fn indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn is_subset_of(&self, other: &MriMask) -> bool {
        self.m == other.m && self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }
}

/// Shape of the random variable-density sampling density
/// `w(r) = (1 − r)^power + floor` over normalized k-space radius `r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskDensity {
    pub power: f64,
    pub floor: f64,
    /// Radius (pixels) of the always-sampled centre.
    pub center_radius: f64,
}

impl Default for MaskDensity {
    fn default() -> Self {
        Self {
            power: 3.0,
            floor: 0.02,
            center_radius: 1.5,
        }
    }
}

/// Nested variable-density masks, one per acceleration factor. Every
/// location gets one weighted random priority, and each mask keeps the
/// `round(M²/R)` highest, so a faster mask is a subset of a slower one.
pub fn variable_density_masks(
    m: usize,
    accelerations: &[f64],
    density: MaskDensity,
    seed: u64,
) -> Result<Vec<MriMask>, ForwardError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = (m / 2) as f64;
    let mut keys: Vec<(f64, usize)> = (0..m * m)
        .map(|i| {
            let (p, q) = ((i / m) as f64 - h, (i % m) as f64 - h);
            let radius = (p * p + q * q).sqrt();
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            if radius <= density.center_radius {
                return (2.0, i);
            }
            let r = (radius / h).min(1.0);
            let w = (1.0 - r).powf(density.power) + density.floor;
            // weighted sampling without replacement: larger u^(1/w) wins
            (u.powf(1.0 / w), i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    accelerations
        .iter()
        .map(|&acc| {
            if !(acc >= 1.0) {
                return Err(ForwardError::InvalidMask(format!("acceleration {acc} below 1")));
            }
            let n = (((m * m) as f64 / acc).round() as usize).max(1);
            let mut mask = vec![false; m * m];
            for &(_, i) in &keys[..n] {
                mask[i] = true;
            }
            MriMask::new(m, mask)
        })
        .collect()
}

/// Centered DFT of `x` at the sampled locations, in [`MriMask::indices`] order.
pub fn mri_forward(x: &[f64], mask: &MriMask) -> Result<Vec<Complex64>, ForwardError> {
    if x.len() != mask.m * mask.m {
        return Err(ForwardError::Dimension {
            expected: mask.m * mask.m,
            got: x.len(),
        });
    }
    let k = fft2_centered(x, mask.m);
    Ok(mask.indices().into_iter().map(|i| k[i]).collect())
}

/// Masked k-space measurements with a single per-component noise std.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceData {
    pub mask: MriMask,
    pub values: Vec<Complex64>,
    pub sigma: f64,
}

/// Noisy measurements with `σ = noise_fraction · |DC|`, where DC `= Σ x`.
pub fn simulate_mri(
    x: &[f64],
    mask: &MriMask,
    noise_fraction: f64,
    seed: u64,
) -> Result<KSpaceData, ForwardError> {
    let dc: f64 = x.iter().sum();
    let sigma = noise_fraction * dc.abs();
    if !(sigma > 0.0) {
        return Err(ForwardError::InvalidMask(format!(
            "noise std {sigma} must be positive (DC {dc})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = mri_forward(x, mask)?
        .into_iter()
        .map(|v| {
            let nr: f64 = rng.sample(StandardNormal);
            let ni: f64 = rng.sample(StandardNormal);
            v + Complex64::new(sigma * nr, sigma * ni)
        })
        .collect();
    Ok(KSpaceData {
        mask: mask.clone(),
        values,
        sigma,
    })
}

/// `½ Σ |y − Fx|² / σ²` over sampled locations.
pub fn chi2_mri(x: &[f64], y: &KSpaceData) -> Result<f64, ForwardError> {
    let model = mri_forward(x, &y.mask)?;
    Ok(0.5
        * y.values
            .iter()
            .zip(&model)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
        / (y.sigma * y.sigma))
}

/// MRI data-fit term as a differentiable per-image function.
pub struct MriLikelihood {
    data: KSpaceData,
    indices: Vec<usize>,
}

impl MriLikelihood {
    pub fn new(data: KSpaceData) -> Result<Self, ForwardError> {
        if data.values.len() != data.mask.count() || !(data.sigma > 0.0) {
            return Err(ForwardError::InvalidMask(
                "k-space values must match the mask and sigma be positive".into(),
            ));
        }
        Ok(Self {
            indices: data.mask.indices(),
            data,
        })
    }

    pub fn data(&self) -> &KSpaceData {
        &self.data
    }

    fn check(&self, row: &[f64]) -> Result<(), RowError> {
        let m = self.data.mask.m;
        if row.len() != m * m {
            return Err(RowError(format!("expected {} pixels, got {}", m * m, row.len())));
        }
        Ok(())
    }
}

impl RowFunction for MriLikelihood {
    fn name(&self) -> &str {
        "chi2_mri"
    }

    fn value(&self, row: &[f64]) -> Result<f64, RowError> {
        self.check(row)?;
        chi2_mri(row, &self.data).map_err(|e| RowError(e.to_string()))
    }

    fn value_and_grad(&self, row: &[f64], grad: &mut [f64]) -> Result<f64, RowError> {
        self.check(row)?;
        let m = self.data.mask.m;
        let k = fft2_centered(row, m);
        let inv_var = 1.0 / (self.data.sigma * self.data.sigma);
        let mut resid = vec![Complex64::new(0.0, 0.0); m * m];
        let mut value = 0.0;
        for (&i, y) in self.indices.iter().zip(&self.data.values) {
            let r = y - k[i];
            value += r.norm_sqr();
            resid[i] = r;
        }
        let back = fft2_centered_adjoint(&resid, m);
        for (g, b) in grad.iter_mut().zip(back) {
            *g = -inv_var * b.re;
        }
        Ok(0.5 * value * inv_var)
    }
}
