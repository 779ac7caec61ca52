use crate::flow::FlowModel;
use crate::forward::ToyPotential;

use super::{AnalysisError, PosteriorSampleSet};

/// Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    pub std_err: f64,
    pub n: usize,
}

/// `mean(log q − log p)` over paired evaluations at samples from `q`.
pub fn kl_from_log_densities(log_q: &[f64], log_p: &[f64]) -> Result<KlEstimate, AnalysisError> {
    if log_q.len() != log_p.len() {
        return Err(AnalysisError::Dimension {
            expected: log_q.len(),
            got: log_p.len(),
        });
    }
    let n = log_q.len();
    if n < 2 {
        return Err(AnalysisError::TooFewSamples { need: 2, got: n });
    }
    let diffs: Vec<f64> = log_q.iter().zip(log_p).map(|(q, p)| q - p).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(KlEstimate {
        value: mean,
        std_err: (var / n as f64).sqrt(),
        n,
    })
}

/// `KL(q ‖ p)` with `q` the flow density and `log_p` a normalized target.
/// `log q` is evaluated through the inverse pass, the same path as
/// [`FlowModel::log_density`], so `p = q` gives exactly zero per sample.
pub fn kl_monte_carlo<F>(model: &FlowModel, log_p: F, n: usize, seed: u64) -> Result<KlEstimate, AnalysisError>
where
    F: Fn(&[f64]) -> f64,
{
    let set = PosteriorSampleSet::draw(model, n, seed, "")?;
    let log_q = model
        .log_density_batch(&set.samples)
        .map_err(|e| AnalysisError::Flow(e.to_string()))?;
    let lp: Vec<f64> = (0..n).map(|r| log_p(set.samples.row(r))).collect();
    kl_from_log_densities(&log_q, &lp)
}

/// Axis-aligned integration box in 2D.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl GridBox {
    /// `[−half, half]²`.
    pub fn square(half: f64) -> Self {
        Self {
            lo: [-half, -half],
            hi: [half, half],
        }
    }
}

/// Relative density allowed on the box edge.
const EDGE_MASS: f64 = 1e-10;

/// `log ∫ exp(−J)` by the trapezoidal rule on `resolution` intervals per axis.
pub fn grid_log_partition(potential: &ToyPotential, bx: &GridBox, resolution: usize) -> Result<f64, AnalysisError> {
    if resolution < 2 || !(bx.hi[0] > bx.lo[0] && bx.hi[1] > bx.lo[1]) {
        return Err(AnalysisError::Usage("grid needs a non-empty box and at least 2 intervals".into()));
    }
    let n = resolution + 1;
    let h = [
        (bx.hi[0] - bx.lo[0]) / resolution as f64,
        (bx.hi[1] - bx.lo[1]) / resolution as f64,
    ];
    let mut neg_j = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let x = [bx.lo[0] + i as f64 * h[0], bx.lo[1] + j as f64 * h[1]];
            neg_j[i * n + j] = -potential.value(x);
        }
    }
    let peak = neg_j.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let edge = (0..n)
        .flat_map(|k| [k, (n - 1) * n + k, k * n, k * n + n - 1])
        .map(|idx| neg_j[idx])
        .fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() || edge - peak >= EDGE_MASS.ln() {
        return Err(AnalysisError::BoxTooSmall {
            boundary: edge.exp(),
            peak: peak.exp(),
        });
    }
    let weight = |k: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += weight(i) * weight(j) * (neg_j[i * n + j] - peak).exp();
        }
    }
    Ok(peak + (acc * h[0] * h[1]).ln())
}
