use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::Tensor;
use crate::flow::FlowModel;

use super::AnalysisError;

/// Flow samples with their log densities and where they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSampleSet {
    /// `[N, D]`.
    pub samples: Tensor,
    pub log_q: Vec<f64>,
    pub checkpoint_id: String,
    pub seed: u64,
}

impl PosteriorSampleSet {
    pub fn new(samples: Tensor, log_q: Vec<f64>, checkpoint_id: String, seed: u64) -> Result<Self, AnalysisError> {
        if samples.rank() != 2 || samples.rows() != log_q.len() {
            return Err(AnalysisError::Dimension {
                expected: samples.rows(),
                got: log_q.len(),
            });
        }
        if let Some(i) = log_q.iter().position(|v| !v.is_finite()) {
            return Err(AnalysisError::Domain(format!("log q of sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            log_q,
            checkpoint_id,
            seed,
        })
    }

    /// Draws `n` samples from `model` with a seeded generator.
    pub fn draw(model: &FlowModel, n: usize, seed: u64, checkpoint_id: &str) -> Result<Self, AnalysisError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, log_q) = model.sample(n, &mut rng).map_err(|e| AnalysisError::Flow(e.to_string()))?;
        Self::new(x, log_q, checkpoint_id.to_string(), seed)
    }

    pub fn len(&self) -> usize {
        self.log_q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_q.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleStats {
    pub mean: Vec<f64>,
    /// Per-coordinate standard deviation with the `N − 1` divisor.
    pub std: Vec<f64>,
    /// Unbiased covariance.
    pub cov: DMatrix<f64>,
}

/// Mean, standard deviation and covariance of the rows of `x`.
pub fn sample_stats(x: &Tensor) -> Result<SampleStats, AnalysisError> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(AnalysisError::TooFewSamples { need: 2, got: n });
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |r, c| x.row(r)[c] - mean[c]);
    let mut cov = centered.tr_mul(&centered) / (n - 1) as f64;
    // exact symmetry
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let std = (0..d).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    Ok(SampleStats { mean, std, cov })
}

/// Fraction of pixels with `|mean − truth| ≤ k·std`. Zero-std pixels count
/// only on an exact match.
pub fn coverage_fraction(mean: &[f64], std: &[f64], truth: &[f64], k: f64) -> Result<f64, AnalysisError> {
    if mean.len() != truth.len() || std.len() != truth.len() {
        return Err(AnalysisError::Dimension {
            expected: truth.len(),
            got: mean.len().min(std.len()),
        });
    }
    if truth.is_empty() {
        return Err(AnalysisError::Usage("empty image".into()));
    }
    let covered = mean
        .iter()
        .zip(std)
        .zip(truth)
        .filter(|((m, s), t)| (*m - *t).abs() <= k * *s)
        .count();
    Ok(covered as f64 / truth.len() as f64)
}
