use super::{Graph, GraphError, NodeId, Tensor};

/// Finite-difference comparison for one parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub node: NodeId,
    /// `max |analytic − numeric| / max(|analytic|∞, |numeric|∞)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±h probe crossed a non-differentiable point.
    pub skipped: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub step: f64,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped).sum()
    }
}

fn root_value(g: &mut Graph, inputs: &[(&str, &Tensor)], root: NodeId) -> Result<f64, GraphError> {
    g.evaluate(inputs)?;
    let v = g.value(root).ok_or(GraphError::NotEvaluated)?;
    v.item().ok_or_else(|| GraphError::NonScalarRoot {
        node: root.index(),
        shape: v.shape().to_vec(),
    })
}

fn kink_signature(g: &Graph, kinks: &[NodeId]) -> Vec<i8> {
    kinks
        .iter()
        .flat_map(|&k| {
            g.value(k)
                .map(|t| t.data().iter().map(|&x| x.partial_cmp(&0.0).map_or(2, |o| o as i8)).collect::<Vec<_>>())
                .unwrap_or_default()
        })
        .collect()
}

/// Compares analytic parameter gradients of a scalar `root` against central
/// differences with step `h`. Coordinates whose probe changes the sign
/// pattern of any leaky-ReLU input are skipped rather than failed.
///
/// The graph is left evaluated (with gradients) at the original parameters.
pub fn check_gradients(
    g: &mut Graph,
    inputs: &[(&str, &Tensor)],
    root: NodeId,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, GraphError> {
    root_value(g, inputs, root)?;
    g.backward(root)?;
    let kinks = g.kink_inputs();
    let base_sig = kink_signature(g, &kinks);
    let params = g.parameters();
    let analytic: Vec<Tensor> = params
        .iter()
        .map(|&p| {
            g.grad(p)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(g.value(p).expect("param value").shape()))
        })
        .collect();

    let mut report = Vec::with_capacity(params.len());
    for (&p, grad) in params.iter().zip(&analytic) {
        let n = grad.len();
        let mut max_diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        let (mut checked, mut skipped) = (0, 0);
        for j in 0..n {
            let orig = g.value(p).expect("param").data()[j];
            g.stored_value_mut(p).expect("param").data_mut()[j] = orig + h;
            let fp = root_value(g, inputs, root)?;
            let sig_p = kink_signature(g, &kinks);
            g.stored_value_mut(p).expect("param").data_mut()[j] = orig - h;
            let fm = root_value(g, inputs, root)?;
            let sig_m = kink_signature(g, &kinks);
            g.stored_value_mut(p).expect("param").data_mut()[j] = orig;
            let at_kink = base_sig.contains(&0);
            if at_kink || sig_p != base_sig || sig_m != base_sig {
                skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = grad.data()[j];
            max_diff = max_diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
            checked += 1;
        }
        let max_rel_error = if scale > 0.0 { max_diff / scale } else { max_diff };
        report.push(ParamCheck {
            node: p,
            max_rel_error,
            checked,
            skipped,
        });
    }
    root_value(g, inputs, root)?;
    g.backward(root)?;
    let passed = report.iter().all(|p| p.max_rel_error <= tol);
    Ok(GradCheckReport {
        params: report,
        step: h,
        tol,
        passed,
    })
}
