use super::PriorError;

pub const TV_EPSILON: f64 = 1e-8;
pub const MEM_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum SmoothKind {
    /// `Σ √((∇h x)² + (∇v x)² + ε²)`.
    Tv { eps: f64 },
    /// `Σ (∇h x)² + (∇v x)²`.
    Tsv,
    L1,
    /// `Σ x log((x + ε) / p)` against a positive prior image `p`.
    Mem { prior: Vec<f64>, eps: f64 },
}

impl SmoothKind {
    pub fn tv() -> Self {
        SmoothKind::Tv { eps: TV_EPSILON }
    }

    pub fn mem(prior: Vec<f64>) -> Result<Self, PriorError> {
        if let Some(i) = prior.iter().position(|&p| !(p > 0.0)) {
            return Err(PriorError::InvalidParameter(format!(
                "MEM prior image must be positive; pixel {i} is {}",
                prior[i]
            )));
        }
        Ok(SmoothKind::Mem { prior, eps: MEM_EPSILON })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SmoothKind::Tv { .. } => "tv",
            SmoothKind::Tsv => "tsv",
            SmoothKind::L1 => "l1",
            SmoothKind::Mem { .. } => "mem",
        }
    }
}

/// Forward differences with a replicate boundary (zero past the last row/column).
fn diffs(x: &[f64], m: usize, r: usize, c: usize) -> (f64, f64) {
    let here = x[r * m + c];
    let dh = if c + 1 < m { x[r * m + c + 1] - here } else { 0.0 };
    let dv = if r + 1 < m { x[(r + 1) * m + c] - here } else { 0.0 };
    (dh, dv)
}

/// Value of a smoothness regularizer on an `m × m` image, with its gradient
/// written to `grad` when given.
pub fn smooth_reg_grad(x: &[f64], m: usize, kind: &SmoothKind, grad: Option<&mut [f64]>) -> Result<f64, PriorError> {
    if x.len() != m * m {
        return Err(PriorError::Dimension {
            expected: m * m,
            got: x.len(),
        });
    }
    let mut grad = grad;
    if let Some(g) = grad.as_mut() {
        g.fill(0.0);
    }
    let mut total = 0.0;
    match kind {
        SmoothKind::Tv { .. } | SmoothKind::Tsv => {
            let tv_eps = match kind {
                SmoothKind::Tv { eps } => Some(*eps),
                _ => None,
            };
            for r in 0..m {
                for c in 0..m {
                    let (dh, dv) = diffs(x, m, r, c);
                    // d term / d(dh, dv)
                    let (gh, gv) = match tv_eps {
                        Some(e) => {
                            let s = (dh * dh + dv * dv + e * e).sqrt();
                            total += s;
                            (dh / s, dv / s)
                        }
                        None => {
                            total += dh * dh + dv * dv;
                            (2.0 * dh, 2.0 * dv)
                        }
                    };
                    if let Some(g) = grad.as_mut() {
                        let i = r * m + c;
                        if c + 1 < m {
                            g[i + 1] += gh;
                            g[i] -= gh;
                        }
                        if r + 1 < m {
                            g[i + m] += gv;
                            g[i] -= gv;
                        }
                    }
                }
            }
        }
        SmoothKind::L1 => {
            for (i, &v) in x.iter().enumerate() {
                total += v.abs();
                if let Some(g) = grad.as_mut() {
                    // left-limit slope at 0
                    g[i] = if v > 0.0 { 1.0 } else { -1.0 };
                }
            }
        }
        SmoothKind::Mem { prior, eps } => {
            if prior.len() != x.len() {
                return Err(PriorError::Dimension {
                    expected: x.len(),
                    got: prior.len(),
                });
            }
            for (i, (&v, &p)) in x.iter().zip(prior).enumerate() {
                if v < 0.0 {
                    return Err(PriorError::Domain(format!("MEM needs x ≥ 0; pixel {i} is {v}")));
                }
                let l = if v > 0.0 {
                    (v / p).ln() + (eps / v).ln_1p()
                } else {
                    (eps / p).ln()
                };
                total += v * l;
                if let Some(g) = grad.as_mut() {
                    g[i] = l + v / (v + eps);
                }
            }
        }
    }
    Ok(total)
}

pub fn smooth_reg(x: &[f64], m: usize, kind: &SmoothKind) -> Result<f64, PriorError> {
    smooth_reg_grad(x, m, kind, None)
}
