use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::Tensor;
use crate::forward::ClosureLikelihood;

use super::AnalysisError;

/// Principal-component projection of a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaEmbedding {
    /// `N × dims` coordinates, row-major.
    pub coords: Vec<f64>,
    pub dims: usize,
    /// Unit principal directions, one `D`-vector per kept dimension.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the scatter matrix `XcᵀXc`, descending, all of them
    /// (up to `min(N, D)`).
    pub scatter_eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
}

impl PcaEmbedding {
    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dims..(i + 1) * self.dims]
    }
}

/// Projects the centered rows of `x` onto their top `dims` principal
/// directions. Uses the `N × N` Gram matrix when that is smaller.
pub fn pca_embed(x: &Tensor, dims: usize) -> Result<PcaEmbedding, AnalysisError> {
    let (n, d) = (x.rows(), x.cols());
    if dims == 0 || n <= dims || dims > d {
        return Err(AnalysisError::Usage(format!(
            "PCA to {dims} dimensions needs more than {dims} samples and at least {dims} coordinates"
        )));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        mean.iter_mut().zip(x.row(r)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let xc = DMatrix::from_fn(n, d, |r, c| x.row(r)[c] - mean[c]);

    let (values, directions): (Vec<f64>, Vec<Vec<f64>>) = if d <= n {
        let eig = xc.tr_mul(&xc).symmetric_eigen();
        let order = descending(eig.eigenvalues.as_slice());
        let vals = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let dirs = order.iter().map(|&i| eig.eigenvectors.column(i).iter().cloned().collect()).collect();
        (vals, dirs)
    } else {
        let eig = (&xc * xc.transpose()).symmetric_eigen();
        let order = descending(eig.eigenvalues.as_slice());
        let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        // right singular vectors from left ones; null directions stay zero
        let dirs = order
            .iter()
            .zip(&vals)
            .map(|(&i, &lam)| {
                if lam <= 0.0 {
                    return vec![0.0; d];
                }
                let v = xc.tr_mul(&eig.eigenvectors.column(i).into_owned()) / lam.sqrt();
                v.iter().cloned().collect()
            })
            .collect();
        (vals, dirs)
    };
    let mut components: Vec<Vec<f64>> = directions.into_iter().take(dims).collect();
    // sign convention: largest-magnitude entry positive
    for c in components.iter_mut() {
        let big = c.iter().cloned().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        if big < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let mut coords = vec![0.0; n * dims];
    for r in 0..n {
        for (k, comp) in components.iter().enumerate() {
            coords[r * dims + k] = (0..d).map(|c| xc[(r, c)] * comp[c]).sum();
        }
    }
    Ok(PcaEmbedding {
        coords,
        dims,
        components,
        scatter_eigenvalues: values,
        mean,
    })
}

fn descending(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

/// Best-of-restarts k-means partition.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn lloyd(points: &[&[f64]], mut centers: Vec<Vec<f64>>) -> KMeans {
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..300 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centers.iter().enumerate() {
                let d = dist2(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            if labels[i] != best.0 {
                labels[i] = best.0;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p.iter()).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // re-seed an empty cluster at the worst-fit point
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        dist2(points[a], &centers[labels[a]]).total_cmp(&dist2(points[b], &centers[labels[b]]))
                    })
                    .expect("non-empty");
                centers[j] = points[far].to_vec();
                labels[far] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| dist2(p, &centers[l])).sum();
    KMeans {
        labels,
        centers,
        inertia,
    }
}

fn plus_plus<R: Rng>(points: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.gen_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen_range(0.0..total);
            let mut idx = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.gen_range(0..points.len())
        };
        centers.push(points[pick].to_vec());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

/// k-means++ seeding followed by Lloyd iterations, best inertia over
/// `restarts` seeded runs.
pub fn kmeans(points: &[&[f64]], k: usize, seed: u64, restarts: usize) -> Result<KMeans, AnalysisError> {
    if k == 0 || k > points.len() {
        return Err(AnalysisError::Usage(format!("k = {k} with {} points", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, plus_plus(points, k, &mut rng));
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Equal-width bins over `[lo, hi]`; the last bin is closed.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mode {
    /// Indices into the input sample set, ascending.
    pub members: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `std / mean` where the mean is positive, else 0.
    pub frac_std: Vec<f64>,
    /// Per-member reduced closure χ² (phase, log amplitude).
    pub chi2: Vec<(f64, f64)>,
    pub phase_hist: Option<Histogram>,
    pub amp_hist: Option<Histogram>,
}

impl Mode {
    pub fn median_chi2(&self) -> Option<(f64, f64)> {
        if self.chi2.is_empty() {
            return None;
        }
        let med = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        };
        Some((
            med(self.chi2.iter().map(|c| c.0).collect()),
            med(self.chi2.iter().map(|c| c.1).collect()),
        ))
    }
}

/// Modes ordered by size (largest first), ties by smallest member index.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeReport {
    pub modes: Vec<Mode>,
    /// Mode index of every sample.
    pub labels: Vec<usize>,
    pub inertia: f64,
}

pub const PCA_DIMS: usize = 10;
pub const RESTARTS: usize = 20;
pub const HIST_BINS: usize = 20;

/// Clusters `samples` (`[N, D]`) into `k` modes with k-means on the leading
/// principal components. Samples are processed in a canonical (sorted)
/// order, so the partition does not depend on how the input is ordered.
/// When `closure` is given, each mode carries reduced χ² histograms on
/// shared bins.
pub fn cluster_modes(
    samples: &Tensor,
    k: usize,
    seed: u64,
    closure: Option<&ClosureLikelihood>,
) -> Result<ModeReport, AnalysisError> {
    cluster_modes_scored(samples, k, seed, closure.map(|c| (c, samples)))
}

/// Like [`cluster_modes`], but per-sample χ² is evaluated on `scored.1`
/// (row-aligned with `samples`), e.g. raw samples when clustering aligned ones.
pub fn cluster_modes_scored(
    samples: &Tensor,
    k: usize,
    seed: u64,
    scored: Option<(&ClosureLikelihood, &Tensor)>,
) -> Result<ModeReport, AnalysisError> {
    let (n, d) = (samples.rows(), samples.cols());
    if let Some((_, raw)) = scored {
        if raw.rows() != n {
            return Err(AnalysisError::Dimension { expected: n, got: raw.rows() });
        }
    }
    if k == 0 || k > n {
        return Err(AnalysisError::Usage(format!("cannot form {k} modes from {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        samples
            .row(a)
            .iter()
            .zip(samples.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let sorted_data: Vec<f64> = order.iter().flat_map(|&i| samples.row(i).iter().cloned()).collect();
    let sorted = Tensor::matrix(n, d, sorted_data).expect("same shape");

    let (labels_sorted, inertia) = if k == 1 {
        (vec![0; n], 0.0)
    } else {
        let dims = PCA_DIMS.min(d).min(n - 1);
        let emb = pca_embed(&sorted, dims)?;
        let points: Vec<&[f64]> = (0..n).map(|i| emb.point(i)).collect();
        let km = kmeans(&points, k, seed, RESTARTS)?;
        (km.labels, km.inertia)
    };
    let mut raw_labels = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        raw_labels[i] = labels_sorted[pos];
    }

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in raw_labels.iter().enumerate() {
        groups[l].push(i);
    }
    groups.retain(|g| !g.is_empty());
    groups.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));

    let chi2_all: Option<Vec<(f64, f64)>> = match scored {
        Some((c, raw)) => Some(
            (0..n)
                .map(|i| {
                    c.chi2(raw.row(i))
                        .map(|r| (r.reduced_phase(), r.reduced_amp()))
                        .map_err(|e| AnalysisError::Domain(e.to_string()))
                })
                .collect::<Result<_, _>>()?,
        ),
        None => None,
    };
    let ranges = chi2_all.as_ref().map(|all| {
        let hi = |f: fn(&(f64, f64)) -> f64| all.iter().map(f).fold(0.0, f64::max);
        (hi(|c| c.0), hi(|c| c.1))
    });

    let mut labels = vec![0; n];
    let mut modes = Vec::with_capacity(groups.len());
    for (label, members) in groups.into_iter().enumerate() {
        let mut mean = vec![0.0; d];
        for &i in &members {
            mean.iter_mut().zip(samples.row(i)).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= members.len() as f64);
        let mut std = vec![0.0; d];
        if members.len() > 1 {
            for &i in &members {
                std.iter_mut()
                    .zip(samples.row(i))
                    .zip(&mean)
                    .for_each(|((s, v), m)| *s += (v - m).powi(2));
            }
            std.iter_mut().for_each(|s| *s = (*s / (members.len() - 1) as f64).sqrt());
        }
        let frac_std = std
            .iter()
            .zip(&mean)
            .map(|(s, m)| if *m > 0.0 { s / m } else { 0.0 })
            .collect();
        let chi2: Vec<(f64, f64)> = chi2_all
            .as_ref()
            .map(|all| members.iter().map(|&i| all[i]).collect())
            .unwrap_or_default();
        let (phase_hist, amp_hist) = match ranges {
            Some((hp, ha)) => (
                Some(Histogram::new(&chi2.iter().map(|c| c.0).collect::<Vec<_>>(), 0.0, hp, HIST_BINS)),
                Some(Histogram::new(&chi2.iter().map(|c| c.1).collect::<Vec<_>>(), 0.0, ha, HIST_BINS)),
            ),
            None => (None, None),
        };
        for &i in &members {
            labels[i] = label;
        }
        modes.push(Mode {
            members,
            mean,
            std,
            frac_std,
            chi2,
            phase_hist,
            amp_hist,
        });
    }
    Ok(ModeReport { modes, labels, inertia })
}
