//! Dense scale/shift network used inside each coupling layer.
//!
//! Five hidden dense layers (linear → leaky-ReLU → per-feature affine
//! normalization) with U-Net style additive skips: hidden 4 receives hidden 2
//! and hidden 5 receives hidden 1. The read-out layer starts at zero.

use rand::Rng;

use crate::diffcore::{gemm, Graph, NodeId, Tensor};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const HIDDEN_LAYERS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_in × n_out`; the layer computes `x · W + b`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn uniform<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        Self {
            n_in,
            n_out,
            weight: (0..n_in * n_out).map(|_| rng.gen_range(-bound..bound)).collect(),
            bias: vec![0.0; n_out],
        }
    }

    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn apply(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * self.n_out];
        gemm(rows, self.n_in, self.n_out, x, false, &self.weight, false, &mut out, false);
        for r in 0..rows {
            for (o, b) in out[r * self.n_out..(r + 1) * self.n_out].iter_mut().zip(&self.bias) {
                *o += b;
            }
        }
        out
    }
}

/// Act-norm style normalization: `y = x * scale + shift`, trained as ordinary
/// parameters after a data-dependent initialization.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl AffineNorm {
    fn identity(width: usize) -> Self {
        Self {
            scale: vec![1.0; width],
            shift: vec![0.0; width],
        }
    }

    fn apply(&self, x: &mut [f64]) {
        let w = self.scale.len();
        for (k, v) in x.iter_mut().enumerate() {
            *v = *v * self.scale[k % w] + self.shift[k % w];
        }
    }

    /// Sets scale/shift so the batch `x` has zero mean and unit variance per feature.
    fn init_from(&mut self, x: &[f64], rows: usize) {
        let w = self.scale.len();
        for j in 0..w {
            let mean = (0..rows).map(|r| x[r * w + j]).sum::<f64>() / rows as f64;
            let var = (0..rows).map(|r| (x[r * w + j] - mean).powi(2)).sum::<f64>() / rows as f64;
            let std = var.sqrt();
            let s = if std > 1e-8 { 1.0 / std } else { 1.0 };
            self.scale[j] = s;
            self.shift[j] = -mean * s;
        }
    }
}

fn leaky(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v <= 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conditioner {
    pub hidden: Vec<(Dense, AffineNorm)>,
    pub output: Dense,
}

/// Parameter node handles for one conditioner inside a graph.
pub(crate) struct ConditionerNodes {
    pub hidden: Vec<[NodeId; 4]>,
    pub output: [NodeId; 2],
}

impl Conditioner {
    /// `widths` must have five entries with `widths[3] == widths[1]` and
    /// `widths[4] == widths[0]` so the skips line up.
    pub fn new<R: Rng>(n_in: usize, n_out: usize, widths: &[usize], rng: &mut R) -> Self {
        debug_assert_eq!(widths.len(), HIDDEN_LAYERS);
        let mut hidden = Vec::with_capacity(HIDDEN_LAYERS);
        let mut prev = n_in;
        for &w in widths {
            hidden.push((Dense::uniform(prev, w, rng), AffineNorm::identity(w)));
            prev = w;
        }
        Self {
            hidden,
            output: Dense::zeros(prev, n_out),
        }
    }

    fn hidden_layer(&self, k: usize, x: &[f64], rows: usize) -> Vec<f64> {
        let (dense, norm) = &self.hidden[k];
        let mut h = dense.apply(x, rows);
        leaky(&mut h);
        norm.apply(&mut h);
        h
    }

    /// Batch evaluation: `x` is `rows × n_in`, result `rows × n_out`.
    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let h1 = self.hidden_layer(0, x, rows);
        let h2 = self.hidden_layer(1, &h1, rows);
        let h3 = self.hidden_layer(2, &h2, rows);
        let mut h4 = self.hidden_layer(3, &h3, rows);
        add_into(&mut h4, &h2);
        let mut h5 = self.hidden_layer(4, &h4, rows);
        add_into(&mut h5, &h1);
        self.output.apply(&h5, rows)
    }

    /// Runs a batch through the hidden layers, initializing each
    /// normalization from the statistics it sees.
    pub fn init_norms(&mut self, x: &[f64], rows: usize) {
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(HIDDEN_LAYERS);
        for k in 0..HIDDEN_LAYERS {
            let input: &[f64] = if k == 0 { x } else { &outs[k - 1] };
            let (dense, _) = &self.hidden[k];
            let mut h = dense.apply(input, rows);
            leaky(&mut h);
            let norm = &mut self.hidden[k].1;
            norm.init_from(&h, rows);
            norm.apply(&mut h);
            match k {
                3 => add_into(&mut h, &outs[1]),
                4 => add_into(&mut h, &outs[0]),
                _ => {}
            }
            outs.push(h);
        }
    }

    pub(crate) fn add_params(&self, g: &mut Graph) -> ConditionerNodes {
        let hidden = self
            .hidden
            .iter()
            .map(|(d, n)| {
                [
                    g.param(Tensor::new(vec![d.n_in, d.n_out], d.weight.clone()).expect("weight shape")),
                    g.param(Tensor::vector(d.bias.clone())),
                    g.param(Tensor::vector(n.scale.clone())),
                    g.param(Tensor::vector(n.shift.clone())),
                ]
            })
            .collect();
        let o = &self.output;
        let output = [
            g.param(Tensor::new(vec![o.n_in, o.n_out], o.weight.clone()).expect("weight shape")),
            g.param(Tensor::vector(o.bias.clone())),
        ];
        ConditionerNodes { hidden, output }
    }

    pub(crate) fn build(g: &mut Graph, nodes: &ConditionerNodes, x: NodeId) -> NodeId {
        let layer = |g: &mut Graph, k: usize, input: NodeId| {
            let [w, b, s, t] = nodes.hidden[k];
            let lin = g.matmul(input, w);
            let pre = g.add(lin, b);
            let act = g.leaky_relu(pre, LEAKY_SLOPE);
            g.affine_norm(act, s, t)
        };
        let h1 = layer(g, 0, x);
        let h2 = layer(g, 1, h1);
        let h3 = layer(g, 2, h2);
        let h4 = layer(g, 3, h3);
        let h4 = g.add(h4, h2);
        let h5 = layer(g, 4, h4);
        let h5 = g.add(h5, h1);
        let lin = g.matmul(h5, nodes.output[0]);
        g.add(lin, nodes.output[1])
    }

    pub(crate) fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(4 * HIDDEN_LAYERS + 2);
        for (d, n) in &self.hidden {
            out.extend([&d.weight[..], &d.bias[..], &n.scale[..], &n.shift[..]]);
        }
        out.extend([&self.output.weight[..], &self.output.bias[..]]);
        out
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(4 * HIDDEN_LAYERS + 2);
        for (d, n) in &mut self.hidden {
            out.push(&mut d.weight[..]);
            out.push(&mut d.bias[..]);
            out.push(&mut n.scale[..]);
            out.push(&mut n.shift[..]);
        }
        out.push(&mut self.output.weight[..]);
        out.push(&mut self.output.bias[..]);
        out
    }

    pub(crate) fn perturb_output<R: Rng>(&mut self, scale: f64, rng: &mut R) {
        for v in self.output.weight.iter_mut().chain(self.output.bias.iter_mut()) {
            *v = rng.gen_range(-scale..scale);
        }
    }
}
