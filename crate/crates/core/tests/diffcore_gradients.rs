//! Finite-difference checks for every graph operation.

use std::sync::Arc;

use dpi::diffcore::{check_gradients, Graph, NodeId, RowError, RowFunction, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Random values kept at least `gap` away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(gap..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contracts a node against fixed random weights so every output element
/// contributes to the scalar root.
fn contract(g: &mut Graph, node: NodeId, shape: &[usize], rng: &mut ChaCha8Rng) -> NodeId {
    let w = if shape.is_empty() {
        Tensor::scalar(rng.gen_range(0.5..1.5))
    } else {
        random_tensor(rng, shape, -1.0, 1.0)
    };
    let w = g.constant(w);
    let prod = g.mul(node, w);
    g.sum(prod)
}

fn assert_passes(g: &mut Graph, inputs: &[(&str, &Tensor)], root: NodeId, what: &str) {
    let report = check_gradients(g, inputs, root, H, TOL).unwrap();
    assert!(
        report.passed,
        "{what}: max relative error {:e}",
        report.max_rel_error()
    );
}

struct Wiggle;

impl RowFunction for Wiggle {
    fn value(&self, row: &[f64]) -> Result<f64, RowError> {
        Ok(row.iter().enumerate().map(|(i, x)| (x * (i + 1) as f64).sin() + 0.5 * x * x).sum())
    }

    fn value_and_grad(&self, row: &[f64], grad: &mut [f64]) -> Result<f64, RowError> {
        for (i, (g, x)) in grad.iter_mut().zip(row).enumerate() {
            let k = (i + 1) as f64;
            *g = k * (x * k).cos() + x;
        }
        self.value(row)
    }
}

#[test]
fn unary_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for instance in 0..20 {
        let shape = [3, 4];
        for op in ["exp", "log", "softplus", "leaky_relu", "tanh", "scale", "sum_rows", "mean", "sum"] {
            let x0 = match op {
                "log" => random_tensor(&mut rng, &shape, 0.2, 2.0),
                "leaky_relu" => away_from_zero(&mut rng, &shape, 0.05),
                _ => random_tensor(&mut rng, &shape, -1.5, 1.5),
            };
            let mut g = Graph::new();
            let x = g.param(x0);
            let (y, out_shape): (NodeId, Vec<usize>) = match op {
                "exp" => (g.exp(x), shape.to_vec()),
                "log" => (g.log(x), shape.to_vec()),
                "softplus" => (g.softplus(x), shape.to_vec()),
                "leaky_relu" => (g.leaky_relu(x, 0.01), shape.to_vec()),
                "tanh" => (g.tanh(x), shape.to_vec()),
                "scale" => (g.scale(x, -1.7), shape.to_vec()),
                "sum_rows" => (g.sum_rows(x), vec![3]),
                "mean" => (g.mean(x), vec![]),
                _ => (g.sum(x), vec![]),
            };
            let root = contract(&mut g, y, &out_shape, &mut rng);
            assert_passes(&mut g, &[], root, &format!("{op} #{instance}"));
        }
    }
}

#[test]
fn binary_and_structural_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for instance in 0..20 {
        for op in ["add", "sub", "mul", "add_row", "mul_row", "matmul", "concat", "split", "permute", "affine_norm", "rowwise"] {
            let mut g = Graph::new();
            let a = g.param(random_tensor(&mut rng, &[4, 3], -1.0, 1.0));
            let (y, shape): (NodeId, Vec<usize>) = match op {
                "add" | "sub" | "mul" => {
                    let b = g.param(random_tensor(&mut rng, &[4, 3], -1.0, 1.0));
                    let y = match op {
                        "add" => g.add(a, b),
                        "sub" => g.sub(a, b),
                        _ => g.mul(a, b),
                    };
                    (y, vec![4, 3])
                }
                "add_row" | "mul_row" => {
                    let b = g.param(random_tensor(&mut rng, &[3], -1.0, 1.0));
                    let y = if op == "add_row" { g.add(a, b) } else { g.mul(a, b) };
                    (y, vec![4, 3])
                }
                "matmul" => {
                    let b = g.param(random_tensor(&mut rng, &[3, 5], -1.0, 1.0));
                    (g.matmul(a, b), vec![4, 5])
                }
                "concat" => {
                    let b = g.param(random_tensor(&mut rng, &[4, 2], -1.0, 1.0));
                    (g.concat(a, b), vec![4, 5])
                }
                "split" => {
                    let (l, r) = g.split(a, 1, 3);
                    let e = g.exp(l);
                    (g.concat(r, e), vec![4, 3])
                }
                "permute" => (g.permute(a, &[2, 0, 1]), vec![4, 3]),
                "affine_norm" => {
                    let s = g.param(random_tensor(&mut rng, &[3], 0.5, 1.5));
                    let b = g.param(random_tensor(&mut rng, &[3], -0.5, 0.5));
                    (g.affine_norm(a, s, b), vec![4, 3])
                }
                _ => (g.rowwise(a, Arc::new(Wiggle)), vec![4]),
            };
            let root = contract(&mut g, y, &shape, &mut rng);
            assert_passes(&mut g, &[], root, &format!("{op} #{instance}"));
        }
    }
}

/// Dense net `x -> leaky(xW1+b1) -> tanh(.W2+b2) -> softplus(.W3+b3)` with a
/// quadratic read-out, all parameters random.
fn three_layer_net(rng: &mut ChaCha8Rng, batch: usize) -> (Graph, NodeId, Tensor) {
    let widths = [5, 7, 6, 3];
    let mut g = Graph::new();
    let x = g.input("x");
    let mut h = x;
    for (layer, win) in widths.windows(2).enumerate() {
        let w = g.param(random_tensor(rng, &[win[0], win[1]], -0.8, 0.8));
        let b = g.param(random_tensor(rng, &[win[1]], -0.3, 0.3));
        let lin = g.matmul(h, w);
        let pre = g.add(lin, b);
        h = match layer {
            0 => g.leaky_relu(pre, 0.01),
            1 => g.tanh(pre),
            _ => g.softplus(pre),
        };
    }
    let sq = g.mul(h, h);
    let root = g.mean(sq);
    let xv = random_tensor(rng, &[batch, widths[0]], -1.0, 1.0);
    (g, root, xv)
}

#[test]
fn three_layer_net_matches_finite_differences_to_1e6() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..5 {
        let (mut g, root, xv) = three_layer_net(&mut rng, 6);
        let report = check_gradients(&mut g, &[("x", &xv)], root, H, 1e-6).unwrap();
        assert!(report.passed, "max rel error {:e}", report.max_rel_error());
    }
}

#[test]
fn linear_graph_is_exact() {
    let mut g = Graph::new();
    let w = g.param(Tensor::vector(vec![0.3, -2.0, 1.25]));
    let x = g.constant(Tensor::vector(vec![1.0, 4.0, -0.5]));
    let root = g.matmul(w, x);
    let report = check_gradients(&mut g, &[], root, H, 1e-9).unwrap();
    assert!(report.max_rel_error() < 1e-10, "{:e}", report.max_rel_error());
}

#[test]
fn probe_at_leaky_relu_kink_is_skipped() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![0.0, 0.7]));
    let y = g.leaky_relu(x, 0.01);
    let root = g.sum(y);
    let report = check_gradients(&mut g, &[], root, H, 1e-4).unwrap();
    assert!(report.passed);
    assert!(report.skipped() > 0);
    // left-limit subgradient at the kink
    assert_eq!(g.grad(x).unwrap().data(), &[0.01, 1.0]);
}

#[test]
fn chain_rule_through_split_graphs_matches_fused_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let w1 = random_tensor(&mut rng, &[4, 5], -1.0, 1.0);
    let w2 = random_tensor(&mut rng, &[5, 2], -1.0, 1.0);
    let xv = random_tensor(&mut rng, &[3, 4], -1.0, 1.0);

    // fused: L = mean(softplus(tanh(x W1) W2))
    let mut fused = Graph::new();
    let x = fused.input("x");
    let p1 = fused.param(w1.clone());
    let p2 = fused.param(w2.clone());
    let a = fused.matmul(x, p1);
    let t = fused.tanh(a);
    let b = fused.matmul(t, p2);
    let s = fused.softplus(b);
    let root = fused.mean(s);
    fused.evaluate(&[("x", &xv)]).unwrap();
    fused.backward(root).unwrap();

    // inner g: y = tanh(x W1)
    let mut inner = Graph::new();
    let xi = inner.input("x");
    let q1 = inner.param(w1);
    let ai = inner.matmul(xi, q1);
    let y = inner.tanh(ai);
    let yv = inner.evaluate(&[("x", &xv)]).unwrap().clone();

    // outer f: L = mean(softplus(y W2)), with y as a parameter to read dL/dy
    let mut outer = Graph::new();
    let yp = outer.param(yv);
    let q2 = outer.param(w2);
    let bo = outer.matmul(yp, q2);
    let so = outer.softplus(bo);
    let ro = outer.mean(so);
    outer.evaluate(&[]).unwrap();
    outer.backward(ro).unwrap();
    let dl_dy = outer.grad(yp).unwrap().clone();

    inner.backward_from(y, dl_dy).unwrap();
    for (split, whole) in [
        (inner.grad(q1).unwrap(), fused.grad(p1).unwrap()),
        (outer.grad(q2).unwrap(), fused.grad(p2).unwrap()),
    ] {
        for (u, v) in split.data().iter().zip(whole.data()) {
            assert!((u - v).abs() <= 1e-12);
        }
    }
}
