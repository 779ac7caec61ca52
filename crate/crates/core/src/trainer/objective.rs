use std::sync::Arc;

use crate::diffcore::{Graph, NodeId, RowFunction, Tensor};
use crate::flow::{FlowGraph, FlowModel};
use crate::forward::{ClosureLikelihood, MriLikelihood, ToyPotential, VisLikelihood};
use crate::priors::PriorSpec;

use super::TrainError;

/// Data-fitting term `L(y, f(x))`, or a toy potential `J(x)`.
#[derive(Clone)]
pub enum Likelihood {
    Visibility(Arc<VisLikelihood>),
    Closure(Arc<ClosureLikelihood>),
    Mri(Arc<MriLikelihood>),
    Potential(Arc<ToyPotential>),
}

impl Likelihood {
    fn row_function(&self) -> Arc<dyn RowFunction> {
        match self {
            Likelihood::Visibility(l) => l.clone(),
            Likelihood::Closure(l) => l.clone(),
            Likelihood::Mri(l) => l.clone(),
            Likelihood::Potential(p) => p.clone(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Likelihood::Visibility(_) => "vis",
            Likelihood::Closure(_) => "closure",
            Likelihood::Mri(_) => "mri",
            Likelihood::Potential(_) => "toy",
        }
    }

    /// Image dimension the likelihood evaluates.
    pub fn dim(&self) -> usize {
        match self {
            Likelihood::Visibility(l) => l.dft().n_pixels(),
            Likelihood::Closure(l) => l.dft().n_pixels(),
            Likelihood::Mri(l) => l.data().mask.m * l.data().mask.m,
            Likelihood::Potential(_) => 2,
        }
    }
}

/// Likelihood plus optional regularizer.
#[derive(Clone)]
pub struct Objective {
    pub likelihood: Likelihood,
    pub prior: Option<Arc<PriorSpec>>,
}

impl Objective {
    pub fn new(likelihood: Likelihood, prior: Option<PriorSpec>) -> Self {
        Self {
            likelihood,
            prior: prior.map(Arc::new),
        }
    }

    pub fn toy(potential: ToyPotential) -> Self {
        Self::new(Likelihood::Potential(Arc::new(potential)), None)
    }
}

/// Batch means of the loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub data_fit: f64,
    pub prior: f64,
    /// `−mean log|det ∂G/∂z|`.
    pub neg_logdet: f64,
}

impl LossBreakdown {
    /// `data_fit + prior + β·neg_logdet`, recomputed from the parts.
    pub fn recombine(&self, beta: f64) -> f64 {
        self.data_fit + self.prior + beta * self.neg_logdet
    }
}

/// The objective as a differentiable graph with the latent batch as the
/// named input `"z"` and β as a constant node.
pub struct ObjectiveGraph {
    graph: Graph,
    flow: FlowGraph,
    data_fit: NodeId,
    prior: Option<NodeId>,
    neg_logdet: NodeId,
    beta: NodeId,
    total: NodeId,
}

impl ObjectiveGraph {
    pub fn new(model: &FlowModel, objective: &Objective, beta: f64) -> Result<Self, TrainError> {
        let d = objective.likelihood.dim();
        if d != model.dim() {
            return Err(TrainError::Dimension {
                expected: d,
                got: model.dim(),
            });
        }
        if let Some(p) = &objective.prior {
            let side = p.side();
            if side * side != d {
                return Err(TrainError::Dimension {
                    expected: side * side,
                    got: d,
                });
            }
        }
        let mut g = Graph::new();
        let z = g.input("z");
        let flow = model.build_graph(&mut g, z);
        let per_sample = g.rowwise(flow.x, objective.likelihood.row_function());
        let data_fit = g.mean(per_sample);
        let prior = objective.prior.as_ref().map(|p| {
            let r = g.rowwise(flow.x, p.clone());
            g.mean(r)
        });
        let mean_logdet = g.mean(flow.logdet);
        let neg_logdet = g.scale(mean_logdet, -1.0);
        let beta = g.constant(Tensor::scalar(beta));
        let entropy = g.mul(neg_logdet, beta);
        let fit = match prior {
            Some(r) => g.add(data_fit, r),
            None => data_fit,
        };
        let total = g.add(fit, entropy);
        Ok(Self {
            graph: g,
            flow,
            data_fit,
            prior,
            neg_logdet,
            beta,
            total,
        })
    }

    pub fn set_beta(&mut self, beta: f64) {
        self.graph
            .set_stored_value(self.beta, Tensor::scalar(beta))
            .expect("beta is a constant node");
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    pub fn root(&self) -> NodeId {
        self.total
    }

    pub fn flow(&self) -> &FlowGraph {
        &self.flow
    }

    fn scalar(&self, id: NodeId) -> f64 {
        self.graph.value(id).and_then(Tensor::item).expect("evaluated scalar")
    }

    pub fn evaluate(&mut self, z: &Tensor) -> Result<LossBreakdown, TrainError> {
        self.graph.evaluate(&[("z", z)])?;
        Ok(LossBreakdown {
            total: self.scalar(self.total),
            data_fit: self.scalar(self.data_fit),
            prior: self.prior.map(|p| self.scalar(p)).unwrap_or(0.0),
            neg_logdet: self.scalar(self.neg_logdet),
        })
    }

    /// Evaluates and back-propagates; gradients come out in checkpoint order.
    pub fn value_and_grad(&mut self, z: &Tensor) -> Result<(LossBreakdown, Vec<Vec<f64>>), TrainError> {
        let loss = self.evaluate(z)?;
        self.graph.backward(self.total)?;
        let grads = self
            .flow
            .params
            .iter()
            .map(|&p| match self.graph.grad(p) {
                Some(t) => t.data().to_vec(),
                None => vec![0.0; self.graph.value(p).map_or(0, Tensor::len)],
            })
            .collect();
        Ok((loss, grads))
    }

    /// Mutable views of the flow parameters held by the graph.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.graph
            .stored_values_mut(&self.flow.params)
            .expect("flow parameters are distinct parameter nodes")
            .into_iter()
            .map(Tensor::data_mut)
            .collect()
    }

    pub fn copy_params_into(&self, model: &mut FlowModel) {
        model.load_params_from_graph(&self.graph, &self.flow);
    }
}

fn one_shot(model: &FlowModel, z: &Tensor, objective: &Objective, beta: f64) -> Result<LossBreakdown, TrainError> {
    ObjectiveGraph::new(model, objective, beta)?.evaluate(z)
}

/// Loss for a latent batch `z` (`[N, D]`).
pub fn dpi_objective(
    model: &FlowModel,
    z: &Tensor,
    likelihood: &Likelihood,
    prior: Option<&PriorSpec>,
    beta: f64,
) -> Result<LossBreakdown, TrainError> {
    let objective = Objective::new(likelihood.clone(), prior.cloned());
    one_shot(model, z, &objective, beta)
}

/// Loss with a toy potential in place of data fit and prior.
pub fn toy_objective(model: &FlowModel, z: &Tensor, potential: &ToyPotential, beta: f64) -> Result<LossBreakdown, TrainError> {
    one_shot(model, z, &Objective::toy(potential.clone()), beta)
}
