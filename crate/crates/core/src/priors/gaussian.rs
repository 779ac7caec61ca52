use nalgebra::{DMatrix, DVector};

use super::PriorError;
use crate::diffcore::gemm;

/// `½ (x − μ)ᵀ Λ⁻¹ (x − μ)` with Λ validated and inverted once through its
/// Cholesky factor.
#[derive(Clone, Debug)]
pub struct GaussianPrior {
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    /// Row-major Λ⁻¹.
    precision: Vec<f64>,
    /// Lower Cholesky factor of Λ.
    chol_l: DMatrix<f64>,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self, PriorError> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(PriorError::Dimension {
                expected: d,
                got: cov.nrows(),
            });
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 * cov.amax().max(1.0) {
            return Err(PriorError::NotPositiveDefinite(format!("asymmetry {asym:e}")));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| PriorError::NotPositiveDefinite("Cholesky factorization failed".into()))?;
        let inv = chol.inverse();
        let inv = (&inv + inv.transpose()) * 0.5;
        let precision = (0..d * d).map(|k| inv[(k / d, k % d)]).collect();
        Ok(Self {
            mean,
            chol_l: chol.l(),
            cov,
            precision,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    pub fn precision(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.precision)
    }

    /// Values and, if requested, gradients `Λ⁻¹(x − μ)` for a `rows × D` batch.
    pub fn eval_batch(&self, x: &[f64], rows: usize, out: &mut [f64], grad: Option<&mut [f64]>) {
        let d = self.dim();
        let diff: Vec<f64> = x.iter().enumerate().map(|(k, v)| v - self.mean[k % d]).collect();
        let mut pd = vec![0.0; rows * d];
        gemm(rows, d, d, &diff, false, &self.precision, false, &mut pd, false);
        for r in 0..rows {
            let span = r * d..(r + 1) * d;
            out[r] = 0.5 * diff[span.clone()].iter().zip(&pd[span]).map(|(a, b)| a * b).sum::<f64>();
        }
        if let Some(g) = grad {
            g.copy_from_slice(&pd);
        }
    }

    /// `μ + L w` with `w` standard normal.
    pub fn sample_with(&self, white: &[f64]) -> Vec<f64> {
        let w = DVector::from_column_slice(white);
        let lw = &self.chol_l * w;
        self.mean.iter().zip(lw.iter()).map(|(m, v)| m + v).collect()
    }
}

pub fn gaussian_reg(x: &[f64], prior: &GaussianPrior) -> Result<f64, PriorError> {
    if x.len() != prior.dim() {
        return Err(PriorError::Dimension {
            expected: prior.dim(),
            got: x.len(),
        });
    }
    let mut out = [0.0];
    prior.eval_batch(x, 1, &mut out, None);
    Ok(out[0])
}
