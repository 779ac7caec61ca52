//! Two-dimensional toy potentials `J(x)` defining `p(x) ∝ exp(−J(x))`.

use std::f64::consts::PI;

use super::ForwardError;
use crate::diffcore::{RowError, RowFunction};

/// One mixture component with cached precision and normalizer.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    precision: [[f64; 2]; 2],
    log_norm: f64,
}

impl GmmComponent {
    pub fn new(weight: f64, mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self, ForwardError> {
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        if !(weight > 0.0) || !(cov[0][0] > 0.0) || !(det > 0.0) || cov[0][1] != cov[1][0] {
            return Err(ForwardError::InvalidPotential(format!(
                "component needs positive weight and SPD covariance, got w={weight} cov={cov:?}"
            )));
        }
        let precision = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        Ok(Self {
            weight,
            mean,
            cov,
            precision,
            log_norm: weight.ln() - (2.0 * PI).ln() - 0.5 * det.ln(),
        })
    }

    /// `log(w N(x; μ, Σ))` and its gradient.
    fn log_weighted_density(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1]];
        let p = &self.precision;
        let pd = [p[0][0] * d[0] + p[0][1] * d[1], p[1][0] * d[0] + p[1][1] * d[1]];
        (self.log_norm - 0.5 * (d[0] * pd[0] + d[1] * pd[1]), [-pd[0], -pd[1]])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ToyPotential {
    /// `J = −log Σ_k w_k N(x; μ_k, Σ_k)`.
    GaussianMixture(Vec<GmmComponent>),
    /// `J = ½(x₂ / (width (|x₁| + offset)))² + ½(x₁ / spread)²`.
    Bowtie { width: f64, offset: f64, spread: f64 },
    /// `J = ½((x₂ − amplitude sin(2π x₁ / period)) / width)²`, plus
    /// `½(x₁ / confine)²` when `confine` is set.
    Sinusoidal {
        amplitude: f64,
        period: f64,
        width: f64,
        confine: Option<f64>,
    },
    /// Unnormalized isotropic Gaussian `J = ½‖x‖² / σ²`.
    Gaussian { sigma: f64 },
}

impl ToyPotential {
    pub fn bowtie() -> Self {
        ToyPotential::Bowtie {
            width: 0.4,
            offset: 0.1,
            spread: 2.0,
        }
    }

    pub fn sinusoidal() -> Self {
        ToyPotential::Sinusoidal {
            amplitude: 1.0,
            period: 4.0,
            width: 0.4,
            confine: None,
        }
    }

    pub fn standard_gaussian() -> Self {
        ToyPotential::Gaussian { sigma: 1.0 }
    }

    pub fn gaussian_mixture(components: Vec<GmmComponent>) -> Result<Self, ForwardError> {
        if components.is_empty() {
            return Err(ForwardError::InvalidPotential("mixture has no components".into()));
        }
        Ok(ToyPotential::GaussianMixture(components))
    }

    /// Two equal-weight components used by the β sweep.
    pub fn default_mixture() -> Self {
        let c = |mx: f64, my: f64| GmmComponent::new(0.5, [mx, my], [[0.3, 0.0], [0.0, 0.3]]).expect("valid");
        ToyPotential::GaussianMixture(vec![c(-1.0, -0.5), c(1.0, 0.5)])
    }

    pub fn name(&self) -> &'static str {
        match self {
            ToyPotential::GaussianMixture(_) => "gaussian-mixture",
            ToyPotential::Bowtie { .. } => "bowtie",
            ToyPotential::Sinusoidal { .. } => "sinusoidal",
            ToyPotential::Gaussian { .. } => "gaussian",
        }
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        self.value_and_grad(x).0
    }

    /// `J(x)` and `∇J(x)`. At `x₁ = 0` the bowtie takes the left-limit slope of `|x₁|`.
    pub fn value_and_grad(&self, x: [f64; 2]) -> (f64, [f64; 2]) {
        match self {
            ToyPotential::GaussianMixture(comps) => {
                let parts: Vec<(f64, [f64; 2])> = comps.iter().map(|c| c.log_weighted_density(x)).collect();
                let top = parts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                let mut g = [0.0; 2];
                for (lw, dg) in &parts {
                    let e = (lw - top).exp();
                    total += e;
                    g[0] += e * dg[0];
                    g[1] += e * dg[1];
                }
                let lse = top + total.ln();
                (-lse, [-g[0] / total, -g[1] / total])
            }
            ToyPotential::Bowtie { width, offset, spread } => {
                let sign = if x[0] > 0.0 { 1.0 } else { -1.0 };
                let a = width * (x[0].abs() + offset);
                let q = x[1] / a;
                let j = 0.5 * q * q + 0.5 * (x[0] / spread).powi(2);
                let dq_dx1 = -x[1] / (a * a) * width * sign;
                (j, [q * dq_dx1 + x[0] / (spread * spread), q / a])
            }
            ToyPotential::Sinusoidal {
                amplitude,
                period,
                width,
                confine,
            } => {
                let k = 2.0 * PI / period;
                let r = (x[1] - amplitude * (k * x[0]).sin()) / width;
                let mut j = 0.5 * r * r;
                let mut g = [-r * amplitude * k * (k * x[0]).cos() / width, r / width];
                if let Some(c) = confine {
                    j += 0.5 * (x[0] / c).powi(2);
                    g[0] += x[0] / (c * c);
                }
                (j, g)
            }
            ToyPotential::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                (0.5 * (x[0] * x[0] + x[1] * x[1]) / s2, [x[0] / s2, x[1] / s2])
            }
        }
    }

    pub fn validate(&self) -> Result<(), ForwardError> {
        let ok = match self {
            ToyPotential::GaussianMixture(c) => !c.is_empty(),
            ToyPotential::Bowtie { width, offset, spread } => *width > 0.0 && *offset > 0.0 && *spread > 0.0,
            ToyPotential::Sinusoidal {
                period, width, confine, ..
            } => *period > 0.0 && *width > 0.0 && confine.map_or(true, |c| c > 0.0),
            ToyPotential::Gaussian { sigma } => *sigma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ForwardError::InvalidPotential(format!("bad {} parameters", self.name())))
        }
    }
}

fn as_pair(row: &[f64]) -> Result<[f64; 2], RowError> {
    match row {
        [a, b] => Ok([*a, *b]),
        _ => Err(RowError(format!("toy potentials are 2-D, got {} values", row.len()))),
    }
}

impl RowFunction for ToyPotential {
    fn name(&self) -> &str {
        "toy_potential"
    }

    fn value(&self, row: &[f64]) -> Result<f64, RowError> {
        Ok(ToyPotential::value(self, as_pair(row)?))
    }

    fn value_and_grad(&self, row: &[f64], grad: &mut [f64]) -> Result<f64, RowError> {
        let (j, g) = ToyPotential::value_and_grad(self, as_pair(row)?);
        grad.copy_from_slice(&g);
        Ok(j)
    }
}
