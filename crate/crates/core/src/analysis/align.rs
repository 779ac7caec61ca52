use crate::diffcore::Tensor;

use super::AnalysisError;

/// Image that samples are registered against.
#[derive(Clone, Debug, PartialEq)]
pub enum AlignReference {
    /// The mean of the current aligned set, recomputed every pass.
    Mean,
    Image(Vec<f64>),
}

/// Cap on re-estimation passes against a mean reference.
const MAX_PASSES: usize = 50;
/// A shift must beat the current one by this relative margin to replace it.
const TIE_TOL: f64 = 1e-12;

/// `y[(r + dr) mod m, (c + dc) mod m] = x[r, c]`.
fn roll(x: &[f64], m: usize, (dr, dc): (usize, usize), out: &mut [f64]) {
    for r in 0..m {
        let rr = (r + dr) % m;
        for c in 0..m {
            out[rr * m + (c + dc) % m] = x[r * m + c];
        }
    }
}

/// Shift maximizing `Σ ref · roll(x, s)`, keeping `current` unless another
/// shift is clearly better.
fn best_shift(x: &[f64], reference: &[f64], m: usize, current: (usize, usize)) -> (usize, usize) {
    let score = |(dr, dc): (usize, usize)| {
        let mut acc = 0.0;
        for r in 0..m {
            let row = &reference[((r + dr) % m) * m..((r + dr) % m + 1) * m];
            for c in 0..m {
                acc += row[(c + dc) % m] * x[r * m + c];
            }
        }
        acc
    };
    let mut best = current;
    let mut best_score = score(current);
    for dr in 0..m {
        for dc in 0..m {
            let s = score((dr, dc));
            if s > best_score + TIE_TOL * best_score.abs().max(f64::MIN_POSITIVE) {
                best = (dr, dc);
                best_score = s;
            }
        }
    }
    best
}

/// Scales every sample of `samples` (`[N, M²]`) to total `flux`, then
/// circularly shifts each to best match the reference. With
/// [`AlignReference::Mean`] the reference is recomputed and the shifts
/// re-estimated until they stop changing.
pub fn align_normalize(samples: &Tensor, m: usize, reference: &AlignReference, flux: f64) -> Result<Tensor, AnalysisError> {
    let (n, d) = (samples.rows(), samples.cols());
    if d != m * m {
        return Err(AnalysisError::Dimension { expected: m * m, got: d });
    }
    if !(flux > 0.0 && flux.is_finite()) {
        return Err(AnalysisError::Usage(format!("flux target {flux} must be positive")));
    }
    if let AlignReference::Image(img) = reference {
        if img.len() != d {
            return Err(AnalysisError::Dimension { expected: d, got: img.len() });
        }
    }
    let mut normalized = Vec::with_capacity(n * d);
    for r in 0..n {
        let row = samples.row(r);
        if let Some(v) = row.iter().find(|v| **v < 0.0) {
            return Err(AnalysisError::Domain(format!("sample {r} has negative pixel {v}")));
        }
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            return Err(AnalysisError::ZeroFlux(r));
        }
        let s = flux / total;
        normalized.extend(row.iter().map(|v| v * s));
    }

    let fixed = matches!(reference, AlignReference::Image(_));
    let mut shifts = vec![(0usize, 0usize); n];
    let mut aligned = normalized.clone();
    for _ in 0..MAX_PASSES {
        let target = match reference {
            AlignReference::Image(img) => img.clone(),
            AlignReference::Mean => {
                let mut mean = vec![0.0; d];
                for row in aligned.chunks(d) {
                    mean.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                mean.iter_mut().for_each(|a| *a /= n as f64);
                mean
            }
        };
        let mut changed = false;
        for i in 0..n {
            let s = best_shift(&normalized[i * d..(i + 1) * d], &target, m, shifts[i]);
            if s != shifts[i] {
                shifts[i] = s;
                changed = true;
            }
        }
        for i in 0..n {
            roll(&normalized[i * d..(i + 1) * d], m, shifts[i], &mut aligned[i * d..(i + 1) * d]);
        }
        if !changed || fixed {
            break;
        }
    }
    Ok(Tensor::matrix(n, d, aligned).expect("shape preserved"))
}
