use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::conditioner::{Conditioner, ConditionerNodes, HIDDEN_LAYERS};
use super::FlowError;
use crate::diffcore::{softplus, Graph, NodeId, Tensor};

/// Map applied after the last coupling layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputMap {
    /// Architecture A: unconstrained real-valued images.
    Identity,
    /// Architecture B: `x = softplus(u)`, strictly positive images.
    Softplus,
}

impl OutputMap {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputMap::Identity => "none",
            OutputMap::Softplus => "softplus",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" | "identity" => Some(OutputMap::Identity),
            "softplus" => Some(OutputMap::Softplus),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub dim: usize,
    pub n_layers: usize,
    /// Five hidden widths of each conditioner, symmetric for the skips.
    pub widths: Vec<usize>,
    pub output_map: OutputMap,
    pub seed: u64,
    pub scale_clamp: f64,
}

impl FlowConfig {
    /// Defaults: width `max(D, 64)` and scale clamp 1.5.
    pub fn new(dim: usize, n_layers: usize, output_map: OutputMap, seed: u64) -> Self {
        Self {
            dim,
            n_layers,
            widths: vec![dim.max(64); HIDDEN_LAYERS],
            output_map,
            seed,
            scale_clamp: 1.5,
        }
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.widths = vec![width; HIDDEN_LAYERS];
        self
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if self.dim < 2 {
            return Err(FlowError::InvalidConfig(format!("dimension {} < 2", self.dim)));
        }
        if self.n_layers < 1 {
            return Err(FlowError::InvalidConfig("at least one coupling layer".into()));
        }
        if self.widths.len() != HIDDEN_LAYERS || self.widths.contains(&0) {
            return Err(FlowError::InvalidConfig(format!(
                "conditioner needs {HIDDEN_LAYERS} positive widths, got {:?}",
                self.widths
            )));
        }
        if self.widths[3] != self.widths[1] || self.widths[4] != self.widths[0] {
            return Err(FlowError::InvalidConfig(format!(
                "skip connections need symmetric widths, got {:?}",
                self.widths
            )));
        }
        if !(self.scale_clamp > 0.0 && self.scale_clamp.is_finite()) {
            return Err(FlowError::InvalidConfig(format!(
                "scale clamp {} must be positive",
                self.scale_clamp
            )));
        }
        Ok(())
    }
}

/// Fixed bijection applied after a coupling layer: output `i` takes input `indices[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    indices: Vec<usize>,
}

impl Permutation {
    pub fn random<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let mut indices: Vec<usize> = (0..dim).collect();
        indices.shuffle(rng);
        Self { indices }
    }

    pub fn from_indices(indices: Vec<usize>) -> Result<Self, FlowError> {
        let mut seen = vec![false; indices.len()];
        for &i in &indices {
            if i >= indices.len() || seen[i] {
                return Err(FlowError::InvalidConfig(format!(
                    "permutation {indices:?} is not a bijection"
                )));
            }
            seen[i] = true;
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (o, &i) in out.iter_mut().zip(&self.indices) {
            *o = v[i];
        }
    }

    fn invert(&self, v: &[f64], out: &mut [f64]) {
        for (x, &i) in v.iter().zip(&self.indices) {
            out[i] = *x;
        }
    }
}

/// Direction of a coupling evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Affine coupling: the first `split` coordinates pass through and condition
/// a scale `s` and shift `t` for the rest, `b' = b ⊙ exp(s) + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer {
    pub dim: usize,
    pub split: usize,
    pub conditioner: Conditioner,
    pub scale_clamp: f64,
}

impl CouplingLayer {
    pub fn new<R: Rng>(dim: usize, widths: &[usize], scale_clamp: f64, rng: &mut R) -> Self {
        let split = dim / 2;
        Self {
            dim,
            split,
            conditioner: Conditioner::new(split, 2 * (dim - split), widths, rng),
            scale_clamp,
        }
    }

    pub fn pass_len(&self) -> usize {
        self.split
    }

    pub fn transformed_len(&self) -> usize {
        self.dim - self.split
    }

    /// Clamped scale and shift for a batch of pass-through halves.
    fn scale_shift(&self, pass: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
        let nb = self.transformed_len();
        let raw = self.conditioner.forward(pass, rows);
        let c = self.scale_clamp;
        let mut s = Vec::with_capacity(rows * nb);
        let mut t = Vec::with_capacity(rows * nb);
        for r in 0..rows {
            let row = &raw[r * 2 * nb..(r + 1) * 2 * nb];
            s.extend(row[..nb].iter().map(|&v| c * (v / c).tanh()));
            t.extend_from_slice(&row[nb..]);
        }
        (s, t)
    }

    /// Applies the layer to a `rows × dim` batch in place, adding each row's
    /// log-determinant contribution to `logdet`.
    pub fn apply_batch(&self, v: &mut [f64], rows: usize, direction: Direction, logdet: &mut [f64]) {
        let (d, na, nb) = (self.dim, self.split, self.transformed_len());
        let mut pass = Vec::with_capacity(rows * na);
        for r in 0..rows {
            pass.extend_from_slice(&v[r * d..r * d + na]);
        }
        let (s, t) = self.scale_shift(&pass, rows);
        for r in 0..rows {
            let row = &mut v[r * d + na..(r + 1) * d];
            let (sr, tr) = (&s[r * nb..(r + 1) * nb], &t[r * nb..(r + 1) * nb]);
            let mut acc = 0.0;
            for j in 0..nb {
                match direction {
                    Direction::Forward => row[j] = row[j] * sr[j].exp() + tr[j],
                    Direction::Inverse => row[j] = (row[j] - tr[j]) * (-sr[j]).exp(),
                }
                acc += sr[j];
            }
            match direction {
                Direction::Forward => logdet[r] += acc,
                Direction::Inverse => logdet[r] -= acc,
            }
        }
    }

    /// Single-vector form of [`CouplingLayer::apply_batch`].
    pub fn apply(&self, v: &[f64], direction: Direction) -> Result<(Vec<f64>, f64), FlowError> {
        if v.len() != self.dim {
            return Err(FlowError::Dimension {
                expected: self.dim,
                got: v.len(),
            });
        }
        let mut out = v.to_vec();
        let mut ld = [0.0];
        self.apply_batch(&mut out, 1, direction, &mut ld);
        if out.iter().any(|x| !x.is_finite()) || !ld[0].is_finite() {
            return Err(FlowError::NonFinite {
                layer: 0,
                stage: "coupling",
            });
        }
        Ok((out, ld[0]))
    }
}

/// Graph handles produced by [`FlowModel::build_graph`].
pub struct FlowGraph {
    /// Batch of images, `[N, D]`.
    pub x: NodeId,
    /// Per-sample `log |det dG/dz|`, `[N]`.
    pub logdet: NodeId,
    /// Parameter nodes in checkpoint order.
    pub params: Vec<NodeId>,
}

/// Draws from the standard normal latent distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    pub samples: Tensor,
    pub seed: u64,
}

impl LatentBatch {
    pub fn draw(n: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            samples: draw_normal(n, dim, &mut rng),
            seed,
        }
    }
}

pub(crate) fn draw_normal<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Tensor {
    let data: Vec<f64> = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::matrix(n, dim, data).expect("positive batch shape")
}

/// `log N(z; 0, I)`.
pub fn standard_normal_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * z.len() as f64 * (2.0 * PI).ln()
}

/// The invertible generator `x = G(z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    config: FlowConfig,
    pub(crate) layers: Vec<(CouplingLayer, Permutation)>,
    /// Undoes the composed layer permutations so output pixel `i` tracks
    /// latent coordinate `i`.
    restore: Permutation,
    pub(crate) actnorm_initialized: bool,
}

/// Gather indices that invert the composition of `layers`' permutations.
fn restoring_permutation(dim: usize, layers: &[(CouplingLayer, Permutation)]) -> Permutation {
    let mut label: Vec<usize> = (0..dim).collect();
    for (_, perm) in layers {
        label = perm.indices.iter().map(|&i| label[i]).collect();
    }
    let mut inv = vec![0; dim];
    for (pos, &l) in label.iter().enumerate() {
        inv[l] = pos;
    }
    Permutation { indices: inv }
}

impl FlowModel {
    /// Deterministic in `config.seed`. Read-out layers start at zero, so the
    /// fresh model is the identity (followed by the output map).
    pub fn new(config: FlowConfig) -> Result<Self, FlowError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = (0..config.n_layers)
            .map(|_| {
                let coupling =
                    CouplingLayer::new(config.dim, &config.widths, config.scale_clamp, &mut rng);
                let perm = Permutation::random(config.dim, &mut rng);
                (coupling, perm)
            })
            .collect::<Vec<_>>();
        let restore = restoring_permutation(config.dim, &layers);
        Ok(Self {
            config,
            layers,
            restore,
            actnorm_initialized: false,
        })
    }

    pub(crate) fn from_parts(
        config: FlowConfig,
        layers: Vec<(CouplingLayer, Permutation)>,
        actnorm_initialized: bool,
    ) -> Self {
        let restore = restoring_permutation(config.dim, &layers);
        Self {
            config,
            layers,
            restore,
            actnorm_initialized,
        }
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn output_map(&self) -> OutputMap {
        self.config.output_map
    }

    pub fn layers(&self) -> &[(CouplingLayer, Permutation)] {
        &self.layers
    }

    pub fn actnorm_initialized(&self) -> bool {
        self.actnorm_initialized
    }

    fn check_dims(&self, t: &Tensor) -> Result<(), FlowError> {
        if t.cols() != self.dim() {
            return Err(FlowError::Dimension {
                expected: self.dim(),
                got: t.cols(),
            });
        }
        Ok(())
    }

    /// Batch forward pass: returns images and per-row log-determinants.
    pub fn forward_batch(&self, z: &Tensor) -> Result<(Tensor, Vec<f64>), FlowError> {
        self.check_dims(z)?;
        let (rows, d) = (z.rows(), self.dim());
        let mut v = z.data().to_vec();
        let mut tmp = vec![0.0; d];
        let mut logdet = vec![0.0; rows];
        for (li, (coupling, perm)) in self.layers.iter().enumerate() {
            coupling.apply_batch(&mut v, rows, Direction::Forward, &mut logdet);
            for r in 0..rows {
                let row = &mut v[r * d..(r + 1) * d];
                perm.apply(row, &mut tmp);
                row.copy_from_slice(&tmp);
            }
            if v.iter().any(|x| !x.is_finite()) || logdet.iter().any(|x| !x.is_finite()) {
                return Err(FlowError::NonFinite {
                    layer: li,
                    stage: "coupling",
                });
            }
        }
        for r in 0..rows {
            let row = &mut v[r * d..(r + 1) * d];
            self.restore.apply(row, &mut tmp);
            row.copy_from_slice(&tmp);
        }
        if self.output_map() == OutputMap::Softplus {
            for r in 0..rows {
                for u in &mut v[r * d..(r + 1) * d] {
                    // log sigmoid(u) = -softplus(-u)
                    logdet[r] -= softplus(-*u);
                    *u = softplus(*u);
                }
            }
        }
        Ok((Tensor::new(z.shape().to_vec(), v).expect("same shape"), logdet))
    }

    /// Batch inverse: returns latents and per-row forward log-determinants
    /// `log |det dG/dz|` evaluated at those latents.
    pub fn inverse_batch(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>), FlowError> {
        self.check_dims(x)?;
        let (rows, d) = (x.rows(), self.dim());
        let mut v = x.data().to_vec();
        let mut logdet = vec![0.0; rows];
        if self.output_map() == OutputMap::Softplus {
            if let Some(pos) = v.iter().position(|&val| !(val > 0.0)) {
                return Err(FlowError::Domain(format!(
                    "softplus output needs positive values; entry {} of row {} is {}",
                    pos % d,
                    pos / d,
                    v[pos]
                )));
            }
            for r in 0..rows {
                for u in &mut v[r * d..(r + 1) * d] {
                    // softplus⁻¹(x) = x + ln(1 - e^{-x})
                    let inv = *u + (-(-*u).exp_m1()).ln();
                    logdet[r] -= softplus(-inv);
                    *u = inv;
                }
            }
        }
        let mut tmp = vec![0.0; d];
        for r in 0..rows {
            let row = &mut v[r * d..(r + 1) * d];
            self.restore.invert(row, &mut tmp);
            row.copy_from_slice(&tmp);
        }
        for (li, (coupling, perm)) in self.layers.iter().enumerate().rev() {
            for r in 0..rows {
                let row = &mut v[r * d..(r + 1) * d];
                perm.invert(row, &mut tmp);
                row.copy_from_slice(&tmp);
            }
            // inverse accumulation subtracts; flip the sign afterwards
            let mut inv_ld = vec![0.0; rows];
            coupling.apply_batch(&mut v, rows, Direction::Inverse, &mut inv_ld);
            for (l, i) in logdet.iter_mut().zip(&inv_ld) {
                *l -= i;
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(FlowError::NonFinite {
                    layer: li,
                    stage: "inverse coupling",
                });
            }
        }
        Ok((Tensor::new(x.shape().to_vec(), v).expect("same shape"), logdet))
    }

    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, f64), FlowError> {
        let (x, ld) = self.forward_batch(&Tensor::vector(z.to_vec()))?;
        Ok((x.into_data(), ld[0]))
    }

    pub fn inverse(&self, x: &[f64]) -> Result<Vec<f64>, FlowError> {
        Ok(self.inverse_batch(&Tensor::vector(x.to_vec()))?.0.into_data())
    }

    /// `log q(x) = log π(G⁻¹(x)) − log |det dG/dz|`, one value per row.
    pub fn log_density_batch(&self, x: &Tensor) -> Result<Vec<f64>, FlowError> {
        let (z, logdet) = self.inverse_batch(x)?;
        Ok((0..z.rows())
            .map(|r| standard_normal_log_density(z.row(r)) - logdet[r])
            .collect())
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64, FlowError> {
        Ok(self.log_density_batch(&Tensor::vector(x.to_vec()))?[0])
    }

    /// Draws `n` samples, returning `(x, log q(x))` without an inverse pass.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Result<(Tensor, Vec<f64>), FlowError> {
        let z = draw_normal(n, self.dim(), rng);
        let (x, logdet) = self.forward_batch(&z)?;
        let logq = (0..n)
            .map(|r| standard_normal_log_density(z.row(r)) - logdet[r])
            .collect();
        Ok((x, logq))
    }

    /// Data-dependent initialization of every conditioner normalization from
    /// one latent batch. Later calls are no-ops.
    pub fn initialize_actnorm(&mut self, z: &Tensor) -> Result<(), FlowError> {
        if self.actnorm_initialized {
            return Ok(());
        }
        self.check_dims(z)?;
        let (rows, d) = (z.rows(), self.dim());
        let mut v = z.data().to_vec();
        let mut tmp = vec![0.0; d];
        let mut logdet = vec![0.0; rows];
        for (coupling, perm) in self.layers.iter_mut() {
            let na = coupling.split;
            let mut pass = Vec::with_capacity(rows * na);
            for r in 0..rows {
                pass.extend_from_slice(&v[r * d..r * d + na]);
            }
            coupling.conditioner.init_norms(&pass, rows);
            coupling.apply_batch(&mut v, rows, Direction::Forward, &mut logdet);
            for r in 0..rows {
                let row = &mut v[r * d..(r + 1) * d];
                perm.apply(row, &mut tmp);
                row.copy_from_slice(&tmp);
            }
        }
        self.actnorm_initialized = true;
        Ok(())
    }

    /// Replaces every read-out layer with uniform values in `±scale`, giving a
    /// non-trivial invertible map for testing.
    pub fn perturb_output_layers(&mut self, scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (c, _) in &mut self.layers {
            c.conditioner.perturb_output(scale, &mut rng);
        }
    }

    /// Parameter tensors in checkpoint order.
    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|(c, _)| c.conditioner.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|(c, _)| c.conditioner.params_mut())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Appends the flow to `g` with `z` (`[N, D]`) as input. Parameters are
    /// copied into new parameter nodes.
    pub fn build_graph(&self, g: &mut Graph, z: NodeId) -> FlowGraph {
        let c = self.config.scale_clamp;
        let mut v = z;
        let mut logdet: Option<NodeId> = None;
        let mut params = Vec::new();
        for (coupling, perm) in &self.layers {
            let nodes: ConditionerNodes = coupling.conditioner.add_params(g);
            for h in &nodes.hidden {
                params.extend_from_slice(h);
            }
            params.extend_from_slice(&nodes.output);
            let nb = coupling.transformed_len();
            let (a, b) = g.split(v, coupling.split, coupling.dim);
            let raw = Conditioner::build(g, &nodes, a);
            let (raw_s, t) = g.split(raw, nb, 2 * nb);
            let scaled = g.scale(raw_s, 1.0 / c);
            let th = g.tanh(scaled);
            let s = g.scale(th, c);
            let es = g.exp(s);
            let bs = g.mul(b, es);
            let b_new = g.add(bs, t);
            let joined = g.concat(a, b_new);
            v = g.permute(joined, perm.indices());
            let ld = g.sum_rows(s);
            logdet = Some(match logdet {
                Some(prev) => g.add(prev, ld),
                None => ld,
            });
        }
        v = g.permute(v, self.restore.indices());
        if self.output_map() == OutputMap::Softplus {
            let neg = g.scale(v, -1.0);
            let sp = g.softplus(neg);
            let sum = g.sum_rows(sp);
            let log_sig = g.scale(sum, -1.0);
            logdet = Some(match logdet {
                Some(prev) => g.add(prev, log_sig),
                None => log_sig,
            });
            v = g.softplus(v);
        }
        FlowGraph {
            x: v,
            logdet: logdet.expect("at least one layer"),
            params,
        }
    }

    /// Copies parameter values back from a graph built by [`FlowModel::build_graph`].
    pub fn load_params_from_graph(&mut self, g: &Graph, fg: &FlowGraph) {
        for (dst, &node) in self.params_mut().into_iter().zip(&fg.params) {
            dst.copy_from_slice(g.value(node).expect("parameter value").data());
        }
    }

    pub fn set_actnorm_initialized(&mut self, flag: bool) {
        self.actnorm_initialized = flag;
    }
}
