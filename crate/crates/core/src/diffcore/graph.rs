use std::sync::Arc;

use super::gemm::gemm;
use super::{GraphError, Tensor};

/// Index of a node inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Error raised by a [`RowFunction`]; the graph wraps it with the node index.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError(pub String);

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for RowError {}

/// A scalar function applied independently to every row of a batch, with a
/// hand-written gradient. Forward models, data-fitting losses and
/// regularizers enter the graph through this trait.
pub trait RowFunction: Send + Sync {
    fn name(&self) -> &str {
        "rowwise"
    }

    fn value(&self, row: &[f64]) -> Result<f64, RowError>;

    /// Writes `d value / d row` into `grad` (overwriting) and returns the value.
    fn value_and_grad(&self, row: &[f64], grad: &mut [f64]) -> Result<f64, RowError>;

    /// Evaluates every row of a `rows × cols` block into `out`. On failure
    /// returns the offending row. Override to batch expensive work.
    fn batch_value(&self, x: &[f64], cols: usize, out: &mut [f64]) -> Result<(), (usize, RowError)> {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.value(&x[r * cols..(r + 1) * cols]).map_err(|e| (r, e))?;
        }
        Ok(())
    }

    /// Batch form of [`RowFunction::value_and_grad`]; `grad` has the shape of `x`.
    fn batch_value_and_grad(
        &self,
        x: &[f64],
        cols: usize,
        out: &mut [f64],
        grad: &mut [f64],
    ) -> Result<(), (usize, RowError)> {
        for (r, o) in out.iter_mut().enumerate() {
            let span = r * cols..(r + 1) * cols;
            *o = self
                .value_and_grad(&x[span.clone()], &mut grad[span])
                .map_err(|e| (r, e))?;
        }
        Ok(())
    }
}

#[derive(Clone)]
pub(crate) enum Op {
    Input(String),
    Param,
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softplus(NodeId),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumRows(NodeId),
    Gather(NodeId, Arc<[usize]>),
    Concat(NodeId, NodeId),
    Scale(NodeId, f64),
    AffineNorm {
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
    },
    Rowwise(NodeId, Arc<dyn RowFunction>),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param => "param",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Softplus(_) => "softplus",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Tanh(_) => "tanh",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumRows(_) => "sum_rows",
            Op::Gather(..) => "gather",
            Op::Concat(..) => "concat",
            Op::Scale(..) => "scale",
            Op::AffineNorm { .. } => "affine_norm",
            Op::Rowwise(..) => "rowwise",
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Param | Op::Const => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::Concat(a, b) => {
                vec![*a, *b]
            }
            Op::Exp(a)
            | Op::Log(a)
            | Op::Softplus(a)
            | Op::LeakyRelu(a, _)
            | Op::Tanh(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumRows(a)
            | Op::Gather(a, _)
            | Op::Scale(a, _)
            | Op::Rowwise(a, _) => vec![*a],
            Op::AffineNorm { x, scale, shift } => vec![*x, *scale, *shift],
        }
    }
}

struct Node {
    op: Op,
    requires_grad: bool,
}

/// Static computation graph with reverse-mode differentiation.
///
/// Nodes are appended in topological order by the builder methods. Parameter
/// and constant nodes own their values; every other value is recomputed by
/// [`Graph::evaluate`] from the named inputs.
pub struct Graph {
    nodes: Vec<Node>,
    values: Vec<Option<Tensor>>,
    grads: Vec<Option<Tensor>>,
    evaluated: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            evaluated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Option<Tensor>) -> NodeId {
        let requires_grad = match &op {
            Op::Param => true,
            other => other
                .parents()
                .iter()
                .any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node { op, requires_grad });
        self.values.push(value);
        self.grads.push(None);
        self.evaluated = false;
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, name: &str) -> NodeId {
        self.push(Op::Input(name.to_string()), None)
    }

    /// Trainable parameter node.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Param, Some(value))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Const, Some(value))
    }

    /// Elementwise `a + b`; `b` may be a scalar or a row vector broadcast over the rows of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b), None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b), None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b), None)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b), None)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a), None)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a), None)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softplus(a), None)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        self.push(Op::LeakyRelu(a, slope), None)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a), None)
    }

    /// Sum of all elements, giving a scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), None)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a), None)
    }

    /// Sum over the feature axis: `[N, D] -> [N]`.
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumRows(a), None)
    }

    /// Selects feature columns in the given order.
    pub fn gather_cols(&mut self, a: NodeId, indices: &[usize]) -> NodeId {
        self.push(Op::Gather(a, indices.to_vec().into()), None)
    }

    /// Splits the feature axis into `[0, at)` and `[at, width)`.
    pub fn split(&mut self, a: NodeId, at: usize, width: usize) -> (NodeId, NodeId) {
        let left: Vec<usize> = (0..at).collect();
        let right: Vec<usize> = (at..width).collect();
        (self.gather_cols(a, &left), self.gather_cols(a, &right))
    }

    /// Output column `i` is input column `perm[i]`.
    pub fn permute(&mut self, a: NodeId, perm: &[usize]) -> NodeId {
        self.gather_cols(a, perm)
    }

    /// Concatenation along the feature axis.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Concat(a, b), None)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor), None)
    }

    /// Per-feature `x * scale + shift` with `scale`, `shift` of shape `[D]`.
    pub fn affine_norm(&mut self, x: NodeId, scale: NodeId, shift: NodeId) -> NodeId {
        self.push(Op::AffineNorm { x, scale, shift }, None)
    }

    pub fn rowwise(&mut self, a: NodeId, f: Arc<dyn RowFunction>) -> NodeId {
        self.push(Op::Rowwise(a, f), None)
    }

    pub fn parameters(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Param))
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        self.values.get(id.0).and_then(|v| v.as_ref())
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|v| v.as_ref())
    }

    /// Mutable access to a parameter or constant value. Invalidates evaluation.
    pub fn stored_value_mut(&mut self, id: NodeId) -> Option<&mut Tensor> {
        if !matches!(self.nodes.get(id.0)?.op, Op::Param | Op::Const) {
            return None;
        }
        self.evaluated = false;
        self.values[id.0].as_mut()
    }

    /// Mutable access to several distinct parameter or constant values at
    /// once, in the order of `ids`. Invalidates evaluation.
    pub fn stored_values_mut(&mut self, ids: &[NodeId]) -> Result<Vec<&mut Tensor>, GraphError> {
        let mut slot_of = vec![None; self.nodes.len()];
        for (k, id) in ids.iter().enumerate() {
            match self.nodes.get(id.0).map(|n| &n.op) {
                Some(Op::Param | Op::Const) if slot_of[id.0].is_none() => slot_of[id.0] = Some(k),
                _ => {
                    return Err(GraphError::Usage(format!(
                        "node {} is not a distinct parameter or constant",
                        id.0
                    )))
                }
            }
        }
        self.evaluated = false;
        let mut out: Vec<Option<&mut Tensor>> = (0..ids.len()).map(|_| None).collect();
        for (i, v) in self.values.iter_mut().enumerate() {
            if let Some(k) = slot_of[i] {
                out[k] = v.as_mut();
            }
        }
        Ok(out.into_iter().map(|t| t.expect("stored node has a value")).collect())
    }

    pub fn set_stored_value(&mut self, id: NodeId, value: Tensor) -> Result<(), GraphError> {
        match self.nodes.get(id.0).map(|n| &n.op) {
            Some(Op::Param | Op::Const) => {
                self.values[id.0] = Some(value);
                self.evaluated = false;
                Ok(())
            }
            _ => Err(GraphError::Usage(format!(
                "node {} is not a parameter or constant",
                id.0
            ))),
        }
    }

    /// Inputs of every leaky-ReLU node, where a finite-difference probe can
    /// straddle the kink.
    pub(crate) fn kink_inputs(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu(a, _) => Some(a),
                _ => None,
            })
            .collect()
    }

    /// Evaluates every node and returns the value of the last one.
    pub fn evaluate(&mut self, inputs: &[(&str, &Tensor)]) -> Result<&Tensor, GraphError> {
        if self.nodes.is_empty() {
            return Err(GraphError::Usage("empty graph".into()));
        }
        self.evaluated = false;
        for i in 0..self.nodes.len() {
            let op = &self.nodes[i].op;
            let (before, rest) = self.values.split_at_mut(i);
            let slot = &mut rest[0];
            let computed = match op {
                Op::Param | Op::Const => None,
                Op::Input(name) => {
                    let t = inputs
                        .iter()
                        .find(|(n, _)| n == name)
                        .map(|(_, t)| (*t).clone())
                        .ok_or_else(|| GraphError::MissingInput(name.clone()))?;
                    Some(t)
                }
                other => Some(forward_op(i, other, before)?),
            };
            if let Some(t) = computed {
                *slot = Some(t);
            }
            let t = slot
                .as_ref()
                .ok_or_else(|| GraphError::Usage(format!("node {i} has no value")))?;
            if let Some(pos) = t.first_non_finite() {
                let row = (t.rank() >= 1).then(|| pos / t.cols());
                let row = match op {
                    Op::Rowwise(..) | Op::SumRows(_) => Some(pos),
                    _ => row,
                };
                return Err(GraphError::NonFinite {
                    node: i,
                    op: op.name(),
                    row,
                });
            }
        }
        self.evaluated = true;
        Ok(self.values.last().and_then(|v| v.as_ref()).expect("evaluated"))
    }

    /// Reverse pass from a scalar root with seed 1.
    pub fn backward(&mut self, root: NodeId) -> Result<(), GraphError> {
        let value = self.value(root).ok_or(GraphError::NotEvaluated)?;
        if !value.is_scalar_like() {
            return Err(GraphError::NonScalarRoot {
                node: root.0,
                shape: value.shape().to_vec(),
            });
        }
        let seed = Tensor::filled(value.shape(), 1.0);
        self.backward_from(root, seed)
    }

    /// Reverse pass with an explicit upstream gradient for `root`.
    pub fn backward_from(&mut self, root: NodeId, seed: Tensor) -> Result<(), GraphError> {
        if !self.evaluated {
            return Err(GraphError::NotEvaluated);
        }
        let root_shape = self.values[root.0]
            .as_ref()
            .ok_or(GraphError::NotEvaluated)?
            .shape()
            .to_vec();
        if seed.shape() != root_shape.as_slice() {
            return Err(GraphError::Usage(format!(
                "seed shape {:?} does not match root shape {:?}",
                seed.shape(),
                root_shape
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            backward_op(
                i,
                &self.nodes[i].op,
                &self.nodes,
                &self.values,
                &mut self.grads,
                &g,
            )?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

fn val(values: &[Option<Tensor>], id: NodeId) -> &Tensor {
    values[id.0].as_ref().expect("parent evaluated before child")
}

fn shape_err(node: usize, op: &Op, detail: String) -> GraphError {
    GraphError::Shape {
        node,
        op: op.name(),
        detail,
    }
}

#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    Scalar,
    Row,
}

fn broadcast_kind(a: &Tensor, b: &Tensor) -> Option<Broadcast> {
    if a.shape() == b.shape() {
        Some(Broadcast::Same)
    } else if b.is_scalar_like() && b.rank() <= 1 {
        Some(Broadcast::Scalar)
    } else if a.rank() == 2
        && ((b.rank() == 1 && b.shape()[0] == a.cols())
            || (b.rank() == 2 && b.shape()[0] == 1 && b.shape()[1] == a.cols()))
    {
        Some(Broadcast::Row)
    } else {
        None
    }
}

fn elementwise(
    a: &Tensor,
    b: &Tensor,
    kind: Broadcast,
    f: impl Fn(f64, f64) -> f64,
) -> Tensor {
    let bd = b.data();
    let cols = a.cols();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let y = match kind {
                Broadcast::Same => bd[k],
                Broadcast::Scalar => bd[0],
                Broadcast::Row => bd[k % cols],
            };
            f(x, y)
        })
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape as lhs")
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
        .expect("same shape as input")
}

struct MatDims {
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
}

fn matmul_dims(a: &Tensor, b: &Tensor) -> Option<MatDims> {
    let (m, k1, a_vec) = match a.shape() {
        [k] => (1, *k, true),
        [m, k] => (*m, *k, false),
        _ => return None,
    };
    let (k2, n, b_vec) = match b.shape() {
        [k] => (*k, 1, true),
        [k, n] => (*k, *n, false),
        _ => return None,
    };
    if k1 != k2 {
        return None;
    }
    let out_shape = match (a_vec, b_vec) {
        (false, false) => vec![m, n],
        (false, true) => vec![m],
        (true, false) => vec![n],
        (true, true) => vec![],
    };
    Some(MatDims {
        m,
        k: k1,
        n,
        out_shape,
    })
}

fn forward_op(i: usize, op: &Op, values: &[Option<Tensor>]) -> Result<Tensor, GraphError> {
    let out = match op {
        Op::Input(_) | Op::Param | Op::Const => unreachable!("handled by caller"),
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (ta, tb) = (val(values, *a), val(values, *b));
            let kind = broadcast_kind(ta, tb).ok_or_else(|| {
                shape_err(
                    i,
                    op,
                    format!("cannot broadcast {:?} onto {:?}", tb.shape(), ta.shape()),
                )
            })?;
            match op {
                Op::Add(..) => elementwise(ta, tb, kind, |x, y| x + y),
                Op::Sub(..) => elementwise(ta, tb, kind, |x, y| x - y),
                _ => elementwise(ta, tb, kind, |x, y| x * y),
            }
        }
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(values, *a), val(values, *b));
            let d = matmul_dims(ta, tb).ok_or_else(|| {
                shape_err(
                    i,
                    op,
                    format!("inner dimensions of {:?} and {:?} differ", ta.shape(), tb.shape()),
                )
            })?;
            let mut out = vec![0.0; d.m * d.n];
            gemm(d.m, d.k, d.n, ta.data(), false, tb.data(), false, &mut out, false);
            if d.out_shape.is_empty() {
                Tensor::scalar(out[0])
            } else {
                Tensor::new(d.out_shape, out)?
            }
        }
        Op::Exp(a) => map(val(values, *a), f64::exp),
        Op::Log(a) => {
            let ta = val(values, *a);
            if ta.data().iter().any(|&x| x <= 0.0) {
                return Err(GraphError::NonFinite {
                    node: i,
                    op: op.name(),
                    row: ta.data().iter().position(|&x| x <= 0.0).map(|p| p / ta.cols()),
                });
            }
            map(ta, f64::ln)
        }
        Op::Softplus(a) => map(val(values, *a), softplus),
        Op::LeakyRelu(a, slope) => {
            let s = *slope;
            map(val(values, *a), |x| if x > 0.0 { x } else { s * x })
        }
        Op::Tanh(a) => map(val(values, *a), f64::tanh),
        Op::Sum(a) => Tensor::scalar(val(values, *a).data().iter().sum()),
        Op::Mean(a) => {
            let ta = val(values, *a);
            Tensor::scalar(ta.data().iter().sum::<f64>() / ta.len() as f64)
        }
        Op::SumRows(a) => {
            let ta = val(values, *a);
            let sums: Vec<f64> = (0..ta.rows()).map(|r| ta.row(r).iter().sum()).collect();
            if ta.rank() <= 1 {
                Tensor::scalar(sums[0])
            } else {
                Tensor::new(ta.shape()[..ta.rank() - 1].to_vec(), sums)?
            }
        }
        Op::Gather(a, idx) => {
            let ta = val(values, *a);
            let cols = ta.cols();
            if let Some(&bad) = idx.iter().find(|&&j| j >= cols) {
                return Err(shape_err(
                    i,
                    op,
                    format!("column {bad} out of range for width {cols}"),
                ));
            }
            if idx.is_empty() {
                return Err(shape_err(i, op, "empty column selection".into()));
            }
            let mut data = Vec::with_capacity(ta.rows() * idx.len());
            for r in 0..ta.rows() {
                let row = ta.row(r);
                data.extend(idx.iter().map(|&j| row[j]));
            }
            let mut shape = ta.shape().to_vec();
            match shape.last_mut() {
                Some(last) => *last = idx.len(),
                None => shape.push(idx.len()),
            }
            Tensor::new(shape, data)?
        }
        Op::Concat(a, b) => {
            let (ta, tb) = (val(values, *a), val(values, *b));
            if ta.rank() != tb.rank() || ta.rows() != tb.rows() || ta.rank() == 0 {
                return Err(shape_err(
                    i,
                    op,
                    format!("cannot concatenate {:?} and {:?}", ta.shape(), tb.shape()),
                ));
            }
            let mut data = Vec::with_capacity(ta.len() + tb.len());
            for r in 0..ta.rows() {
                data.extend_from_slice(ta.row(r));
                data.extend_from_slice(tb.row(r));
            }
            let mut shape = ta.shape().to_vec();
            *shape.last_mut().expect("rank >= 1") = ta.cols() + tb.cols();
            Tensor::new(shape, data)?
        }
        Op::Scale(a, c) => {
            let c = *c;
            map(val(values, *a), |x| c * x)
        }
        Op::AffineNorm { x, scale, shift } => {
            let (tx, ts, tb) = (val(values, *x), val(values, *scale), val(values, *shift));
            let cols = tx.cols();
            if ts.len() != cols || tb.len() != cols {
                return Err(shape_err(
                    i,
                    op,
                    format!(
                        "scale {:?} / shift {:?} do not match feature width {cols}",
                        ts.shape(),
                        tb.shape()
                    ),
                ));
            }
            let (s, b) = (ts.data(), tb.data());
            let data = tx
                .data()
                .iter()
                .enumerate()
                .map(|(k, &v)| v * s[k % cols] + b[k % cols])
                .collect();
            Tensor::new(tx.shape().to_vec(), data)?
        }
        Op::Rowwise(a, f) => {
            let ta = val(values, *a);
            let mut out = vec![0.0; ta.rows()];
            f.batch_value(ta.data(), ta.cols(), &mut out)
                .map_err(|(row, e)| GraphError::Row {
                    node: i,
                    name: f.name().to_string(),
                    row,
                    message: e.0,
                })?;
            if ta.rank() <= 1 {
                Tensor::scalar(out[0])
            } else {
                Tensor::new(ta.shape()[..ta.rank() - 1].to_vec(), out)?
            }
        }
    };
    Ok(out)
}

fn accumulate(
    nodes: &[Node],
    values: &[Option<Tensor>],
    grads: &mut [Option<Tensor>],
    id: NodeId,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id.0].requires_grad {
        return;
    }
    let slot = &mut grads[id.0];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(val(values, id).shape()));
    }
    f(slot.as_mut().expect("initialized").data_mut());
}

/// Adds `g` into a parent that may have been broadcast.
fn reduce_into(dst: &mut [f64], g: &[f64], kind: Broadcast, cols: usize, sign: f64) {
    match kind {
        Broadcast::Same => dst.iter_mut().zip(g).for_each(|(d, &x)| *d += sign * x),
        Broadcast::Scalar => dst[0] += sign * g.iter().sum::<f64>(),
        Broadcast::Row => {
            for (k, &x) in g.iter().enumerate() {
                dst[k % cols] += sign * x;
            }
        }
    }
}

fn backward_op(
    i: usize,
    op: &Op,
    nodes: &[Node],
    values: &[Option<Tensor>],
    grads: &mut [Option<Tensor>],
    g: &Tensor,
) -> Result<(), GraphError> {
    let gd = g.data();
    match op {
        Op::Input(_) | Op::Param | Op::Const => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let (ta, tb) = (val(values, *a), val(values, *b));
            let kind = broadcast_kind(ta, tb).expect("checked in forward");
            let cols = ta.cols();
            accumulate(nodes, values, grads, *a, |d| {
                d.iter_mut().zip(gd).for_each(|(x, &y)| *x += y)
            });
            let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
            accumulate(nodes, values, grads, *b, |d| reduce_into(d, gd, kind, cols, sign));
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (val(values, *a), val(values, *b));
            let kind = broadcast_kind(ta, tb).expect("checked in forward");
            let cols = ta.cols();
            let (ad, bd) = (ta.data(), tb.data());
            accumulate(nodes, values, grads, *a, |d| {
                for (k, x) in d.iter_mut().enumerate() {
                    let y = match kind {
                        Broadcast::Same => bd[k],
                        Broadcast::Scalar => bd[0],
                        Broadcast::Row => bd[k % cols],
                    };
                    *x += gd[k] * y;
                }
            });
            if nodes[b.0].requires_grad {
                let prod: Vec<f64> = gd.iter().zip(ad).map(|(x, y)| x * y).collect();
                accumulate(nodes, values, grads, *b, |d| {
                    reduce_into(d, &prod, kind, cols, 1.0)
                });
            }
        }
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(values, *a), val(values, *b));
            let dm = matmul_dims(ta, tb).expect("checked in forward");
            // dA = G · Bᵀ, dB = Aᵀ · G
            accumulate(nodes, values, grads, *a, |d| {
                gemm(dm.m, dm.n, dm.k, gd, false, tb.data(), true, d, true)
            });
            accumulate(nodes, values, grads, *b, |d| {
                gemm(dm.k, dm.m, dm.n, ta.data(), true, gd, false, d, true)
            });
        }
        Op::Exp(a) => {
            let y = val(values, NodeId(i)).data();
            accumulate(nodes, values, grads, *a, |d| {
                for k in 0..d.len() {
                    d[k] += gd[k] * y[k];
                }
            });
        }
        Op::Log(a) => {
            let x = val(values, *a).data();
            accumulate(nodes, values, grads, *a, |d| {
                for k in 0..d.len() {
                    d[k] += gd[k] / x[k];
                }
            });
        }
        Op::Softplus(a) => {
            let x = val(values, *a).data();
            accumulate(nodes, values, grads, *a, |d| {
                for k in 0..d.len() {
                    d[k] += gd[k] * sigmoid(x[k]);
                }
            });
        }
        Op::LeakyRelu(a, slope) => {
            let x = val(values, *a).data();
            // left-limit slope at the kink
            accumulate(nodes, values, grads, *a, |d| {
                for k in 0..d.len() {
                    d[k] += if x[k] > 0.0 { gd[k] } else { slope * gd[k] };
                }
            });
        }
        Op::Tanh(a) => {
            let y = val(values, NodeId(i)).data();
            accumulate(nodes, values, grads, *a, |d| {
                for k in 0..d.len() {
                    d[k] += gd[k] * (1.0 - y[k] * y[k]);
                }
            });
        }
        Op::Sum(a) => {
            let s = gd[0];
            accumulate(nodes, values, grads, *a, |d| d.iter_mut().for_each(|x| *x += s));
        }
        Op::Mean(a) => {
            let n = val(values, *a).len() as f64;
            let s = gd[0] / n;
            accumulate(nodes, values, grads, *a, |d| d.iter_mut().for_each(|x| *x += s));
        }
        Op::SumRows(a) => {
            let cols = val(values, *a).cols();
            accumulate(nodes, values, grads, *a, |d| {
                for (k, x) in d.iter_mut().enumerate() {
                    *x += gd[k / cols];
                }
            });
        }
        Op::Gather(a, idx) => {
            let cols = val(values, *a).cols();
            let w = idx.len();
            accumulate(nodes, values, grads, *a, |d| {
                for r in 0..gd.len() / w {
                    for (j, &src) in idx.iter().enumerate() {
                        d[r * cols + src] += gd[r * w + j];
                    }
                }
            });
        }
        Op::Concat(a, b) => {
            let (ca, cb) = (val(values, *a).cols(), val(values, *b).cols());
            let w = ca + cb;
            let rows = gd.len() / w;
            accumulate(nodes, values, grads, *a, |d| {
                for r in 0..rows {
                    for j in 0..ca {
                        d[r * ca + j] += gd[r * w + j];
                    }
                }
            });
            accumulate(nodes, values, grads, *b, |d| {
                for r in 0..rows {
                    for j in 0..cb {
                        d[r * cb + j] += gd[r * w + ca + j];
                    }
                }
            });
        }
        Op::Scale(a, c) => {
            let c = *c;
            accumulate(nodes, values, grads, *a, |d| {
                d.iter_mut().zip(gd).for_each(|(x, &y)| *x += c * y)
            });
        }
        Op::AffineNorm { x, scale, shift } => {
            let (tx, ts) = (val(values, *x), val(values, *scale));
            let cols = tx.cols();
            let (xd, sd) = (tx.data(), ts.data());
            accumulate(nodes, values, grads, *x, |d| {
                for k in 0..d.len() {
                    d[k] += gd[k] * sd[k % cols];
                }
            });
            accumulate(nodes, values, grads, *scale, |d| {
                for k in 0..gd.len() {
                    d[k % cols] += gd[k] * xd[k];
                }
            });
            accumulate(nodes, values, grads, *shift, |d| {
                for k in 0..gd.len() {
                    d[k % cols] += gd[k];
                }
            });
        }
        Op::Rowwise(a, f) => {
            if nodes[a.0].requires_grad {
                let ta = val(values, *a);
                let cols = ta.cols();
                let mut vals = vec![0.0; ta.rows()];
                let mut total = vec![0.0; ta.len()];
                f.batch_value_and_grad(ta.data(), cols, &mut vals, &mut total)
                    .map_err(|(row, e)| GraphError::Row {
                        node: i,
                        name: f.name().to_string(),
                        row,
                        message: e.0,
                    })?;
                for (r, chunk) in total.chunks_mut(cols).enumerate() {
                    let up = gd[r];
                    chunk.iter_mut().for_each(|t| *t *= up);
                }
                accumulate(nodes, values, grads, *a, |d| {
                    d.iter_mut().zip(&total).for_each(|(x, &y)| *x += y)
                });
            }
        }
    }
    Ok(())
}
