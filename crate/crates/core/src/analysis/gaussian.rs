use nalgebra::{DMatrix, DVector};

use super::AnalysisError;

/// Moments of a Gaussian posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn check_square(m: &DMatrix<f64>, n: usize) -> Result<(), AnalysisError> {
    if m.nrows() != n || m.ncols() != n {
        return Err(AnalysisError::Dimension {
            expected: n,
            got: m.nrows(),
        });
    }
    Ok(())
}

/// Posterior of `x ~ N(μ, Λ)` given `y = F x + n`, `n ~ N(0, Σ)`:
/// `m = μ + ΛFᵀ(Σ + FΛFᵀ)⁻¹(y − Fμ)`, `C = Λ − ΛFᵀ(Σ + FΛFᵀ)⁻¹FΛ`.
pub fn analytic_posterior(
    f: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    mu: &DVector<f64>,
    lambda: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<AnalyticPosterior, AnalysisError> {
    let (k, d) = (f.nrows(), f.ncols());
    check_square(sigma, k)?;
    check_square(lambda, d)?;
    if mu.len() != d || y.len() != k {
        return Err(AnalysisError::Dimension {
            expected: d,
            got: mu.len(),
        });
    }
    let lft = lambda * f.transpose();
    let s = sigma + f * &lft;
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| AnalysisError::Singular("Σ + FΛFᵀ".into()))?;
    // gain K = ΛFᵀ S⁻¹, via S Kᵀ = F Λ
    let gain_t = chol.solve(&lft.transpose());
    let resid = y - f * mu;
    let mean = mu + gain_t.tr_mul(&resid);
    let mut cov = lambda - gain_t.tr_mul(&lft.transpose());
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(AnalyticPosterior { mean, cov })
}

/// `KL(N(m0, C0) ‖ N(m1, C1))` in nats.
pub fn gaussian_kl(m0: &DVector<f64>, c0: &DMatrix<f64>, m1: &DVector<f64>, c1: &DMatrix<f64>) -> Result<f64, AnalysisError> {
    let d = m0.len();
    check_square(c0, d)?;
    check_square(c1, d)?;
    if m1.len() != d {
        return Err(AnalysisError::Dimension { expected: d, got: m1.len() });
    }
    let l0 = c0.clone().cholesky().ok_or_else(|| AnalysisError::Singular("C0".into()))?;
    let l1 = c1.clone().cholesky().ok_or_else(|| AnalysisError::Singular("C1".into()))?;
    let logdet = |l: &nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>| {
        2.0 * l.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    };
    let trace = l1.solve(c0).trace();
    let dm = m1 - m0;
    let quad = dm.dot(&l1.solve(&dm));
    Ok(0.5 * (trace + quad - d as f64 + logdet(&l1) - logdet(&l0)))
}
