//! Image regularizers `R(x)` read as negative log-priors, combinable with
//! non-negative weights.

mod gaussian;
mod smooth;
mod spectrum;

use std::sync::Arc;

pub use gaussian::{gaussian_reg, GaussianPrior};
pub use smooth::{smooth_reg, smooth_reg_grad, SmoothKind, MEM_EPSILON, TV_EPSILON};
pub use spectrum::{build_power_spectrum_cov, PowerSpectrumCov};

use thiserror::Error;

use crate::diffcore::{RowError, RowFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("covariance is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("expected length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("outside the regularizer domain: {0}")]
    Domain(String),
    #[error("invalid prior parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Clone, Debug)]
pub enum PriorKind {
    Gaussian(Arc<GaussianPrior>),
    Smooth(SmoothKind),
}

#[derive(Clone, Debug)]
pub struct PriorTerm {
    pub weight: f64,
    pub kind: PriorKind,
}

/// Weighted sum `Σ λᵢ Rᵢ(x)` over `M × M` images.
#[derive(Clone, Debug)]
pub struct PriorSpec {
    m: usize,
    terms: Vec<PriorTerm>,
}

impl PriorSpec {
    /// A prior with no terms (`R ≡ 0`) over `m × m` images.
    pub fn new(m: usize) -> Self {
        Self { m, terms: Vec::new() }
    }

    pub fn with_term(mut self, weight: f64, kind: PriorKind) -> Result<Self, PriorError> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(PriorError::InvalidParameter(format!("weight {weight} must be non-negative")));
        }
        let d = self.m * self.m;
        let len = match &kind {
            PriorKind::Gaussian(g) => Some(g.dim()),
            PriorKind::Smooth(SmoothKind::Mem { prior, .. }) => Some(prior.len()),
            _ => None,
        };
        if let Some(len) = len.filter(|&l| l != d) {
            return Err(PriorError::Dimension { expected: d, got: len });
        }
        self.terms.push(PriorTerm { weight, kind });
        Ok(self)
    }

    pub fn gaussian(prior: GaussianPrior, m: usize, weight: f64) -> Result<Self, PriorError> {
        Self::new(m).with_term(weight, PriorKind::Gaussian(Arc::new(prior)))
    }

    pub fn side(&self) -> usize {
        self.m
    }

    pub fn terms(&self) -> &[PriorTerm] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Weighted value for one image.
    pub fn value(&self, x: &[f64]) -> Result<f64, PriorError> {
        let mut out = [0.0];
        self.eval(x, 1, &mut out, None).map_err(|e| e.1)?;
        Ok(out[0])
    }

    /// Batch evaluation; errors carry the offending row.
    fn eval(&self, x: &[f64], rows: usize, out: &mut [f64], grad: Option<&mut [f64]>) -> Result<(), (usize, PriorError)> {
        let d = self.m * self.m;
        if x.len() != rows * d {
            return Err((
                0,
                PriorError::Dimension {
                    expected: d,
                    got: x.len() / rows.max(1),
                },
            ));
        }
        out.fill(0.0);
        let mut grad = grad;
        if let Some(g) = grad.as_mut() {
            g.fill(0.0);
        }
        let mut tmp_out = vec![0.0; rows];
        let mut tmp_grad = vec![0.0; if grad.is_some() { rows * d } else { 0 }];
        for term in &self.terms {
            let w = term.weight;
            if w == 0.0 {
                continue;
            }
            match &term.kind {
                PriorKind::Gaussian(g) => {
                    g.eval_batch(x, rows, &mut tmp_out, grad.is_some().then_some(&mut tmp_grad[..]));
                }
                PriorKind::Smooth(kind) => {
                    for r in 0..rows {
                        let span = r * d..(r + 1) * d;
                        let gr = grad.is_some().then(|| &mut tmp_grad[span.clone()]);
                        tmp_out[r] = smooth_reg_grad(&x[span], self.m, kind, gr).map_err(|e| (r, e))?;
                    }
                }
            }
            out.iter_mut().zip(&tmp_out).for_each(|(o, v)| *o += w * v);
            if let Some(g) = grad.as_mut() {
                g.iter_mut().zip(&tmp_grad).for_each(|(o, v)| *o += w * v);
            }
        }
        Ok(())
    }
}

fn row_failure((row, e): (usize, PriorError)) -> (usize, RowError) {
    (row, RowError(e.to_string()))
}

impl RowFunction for PriorSpec {
    fn name(&self) -> &str {
        "prior"
    }

    fn value(&self, row: &[f64]) -> Result<f64, RowError> {
        PriorSpec::value(self, row).map_err(|e| RowError(e.to_string()))
    }

    fn value_and_grad(&self, row: &[f64], grad: &mut [f64]) -> Result<f64, RowError> {
        let mut out = [0.0];
        self.eval(row, 1, &mut out, Some(grad)).map_err(|e| RowError(e.1.to_string()))?;
        Ok(out[0])
    }

    fn batch_value(&self, x: &[f64], _cols: usize, out: &mut [f64]) -> Result<(), (usize, RowError)> {
        self.eval(x, out.len(), out, None).map_err(row_failure)
    }

    fn batch_value_and_grad(&self, x: &[f64], _cols: usize, out: &mut [f64], grad: &mut [f64]) -> Result<(), (usize, RowError)> {
        self.eval(x, out.len(), out, Some(grad)).map_err(row_failure)
    }
}
