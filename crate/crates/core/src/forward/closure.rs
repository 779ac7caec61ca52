//! Closure phases and log closure amplitudes with linearized errors.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use num_complex::Complex64;

use super::array::UVCoverage;
use super::vis::{DftMatrix, VisibilitySet};
use super::ForwardError;
use crate::diffcore::{RowError, RowFunction};

/// Wraps an angle to `(−π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosurePhase {
    pub t: f64,
    pub stations: [usize; 3],
    /// Radians.
    pub value: f64,
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogClosureAmplitude {
    pub t: f64,
    pub stations: [usize; 4],
    pub value: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClosureSet {
    pub phases: Vec<ClosurePhase>,
    pub log_amps: Vec<LogClosureAmplitude>,
}

/// Baseline at one scan: coverage row and whether the row is stored as `(b, a)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Leg {
    pub row: usize,
    pub conj: bool,
}

/// Visibility on `a → b` given the stored row value.
fn oriented(v: Complex64, leg: Leg) -> Complex64 {
    if leg.conj {
        v.conj()
    } else {
        v
    }
}

/// Lookup of coverage rows by `(t, a, b)`.
#[derive(Clone, Debug)]
pub struct BaselineIndex {
    map: HashMap<(u64, usize, usize), Leg>,
    by_time: BTreeMap<u64, Vec<usize>>,
}

impl BaselineIndex {
    pub fn new(coverage: &UVCoverage) -> Self {
        let mut map = HashMap::new();
        let mut by_time: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, r) in coverage.rows.iter().enumerate() {
            let key = r.t.to_bits();
            map.entry((key, r.a, r.b)).or_insert(Leg { row: i, conj: false });
            map.entry((key, r.b, r.a)).or_insert(Leg { row: i, conj: true });
            let st = by_time.entry(key).or_default();
            for s in [r.a, r.b] {
                if !st.contains(&s) {
                    st.push(s);
                }
            }
        }
        for st in by_time.values_mut() {
            st.sort_unstable();
        }
        Self { map, by_time }
    }

    pub fn leg(&self, t: f64, a: usize, b: usize) -> Result<Leg, ForwardError> {
        self.map
            .get(&(t.to_bits(), a, b))
            .copied()
            .ok_or(ForwardError::MissingBaseline { t, a, b })
    }

    fn has(&self, key: u64, a: usize, b: usize) -> bool {
        self.map.contains_key(&(key, a, b))
    }
}

/// Station triangles and quadrangles observable at each scan.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClosureGeometry {
    pub triangles: Vec<(f64, [usize; 3])>,
    pub quadrangles: Vec<(f64, [usize; 4])>,
}

/// Every time-coincident triangle `a < b < c` and every sorted 4-subset
/// `a < b < c < d` whose baselines `ab, cd, ac, bd` are all present.
pub fn closure_geometry(coverage: &UVCoverage) -> ClosureGeometry {
    let index = BaselineIndex::new(coverage);
    let mut out = ClosureGeometry::default();
    for (&key, st) in &index.by_time {
        let t = f64::from_bits(key);
        let n = st.len();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let (a, b, c) = (st[i], st[j], st[k]);
                    if index.has(key, a, b) && index.has(key, b, c) && index.has(key, a, c) {
                        out.triangles.push((t, [a, b, c]));
                    }
                    for l in k + 1..n {
                        let d = st[l];
                        if index.has(key, a, b)
                            && index.has(key, c, d)
                            && index.has(key, a, c)
                            && index.has(key, b, d)
                        {
                            out.quadrangles.push((t, [a, b, c, d]));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Resolved legs of every closure quantity of a [`ClosureSet`].
#[derive(Clone, Debug)]
struct ClosureLegs {
    /// `ab, bc, ac`; the phase is `∠V_ab + ∠V_bc − ∠V_ac`.
    triangles: Vec<[Leg; 3]>,
    /// `ab, cd, ac, bd`.
    quadrangles: Vec<[Leg; 4]>,
}

fn triangle_legs(index: &BaselineIndex, t: f64, [a, b, c]: [usize; 3]) -> Result<[Leg; 3], ForwardError> {
    Ok([index.leg(t, a, b)?, index.leg(t, b, c)?, index.leg(t, a, c)?])
}

fn quadrangle_legs(index: &BaselineIndex, t: f64, [a, b, c, d]: [usize; 4]) -> Result<[Leg; 4], ForwardError> {
    Ok([
        index.leg(t, a, b)?,
        index.leg(t, c, d)?,
        index.leg(t, a, c)?,
        index.leg(t, b, d)?,
    ])
}

fn resolve(set: &ClosureSet, coverage: &UVCoverage) -> Result<ClosureLegs, ForwardError> {
    let index = BaselineIndex::new(coverage);
    Ok(ClosureLegs {
        triangles: set
            .phases
            .iter()
            .map(|p| triangle_legs(&index, p.t, p.stations))
            .collect::<Result<_, _>>()?,
        quadrangles: set
            .log_amps
            .iter()
            .map(|q| quadrangle_legs(&index, q.t, q.stations))
            .collect::<Result<_, _>>()?,
    })
}

/// `(value, σ)` of `∠(V_ab V_bc V_ca)` for each triangle.
pub fn closure_phases(
    vis: &VisibilitySet,
    triangles: &[(f64, [usize; 3])],
) -> Result<Vec<(f64, f64)>, ForwardError> {
    let index = BaselineIndex::new(&vis.coverage);
    triangles
        .iter()
        .map(|&(t, st)| {
            let legs = triangle_legs(&index, t, st)?;
            let v: Vec<Complex64> = legs.iter().map(|&l| oriented(vis.vis[l.row], l)).collect();
            if v.iter().any(|z| z.norm() == 0.0) {
                return Err(ForwardError::DegenerateTriangle { t, stations: st });
            }
            let bispectrum = v[0] * v[1] * v[2].conj();
            let var: f64 = legs
                .iter()
                .zip(&v)
                .map(|(l, z)| (vis.coverage.rows[l.row].sigma / z.norm()).powi(2))
                .sum();
            Ok((wrap_phase(bispectrum.arg()), var.sqrt()))
        })
        .collect()
}

/// `(value, σ)` of `log(|V_ab||V_cd| / (|V_ac||V_bd|))` for each quadrangle.
pub fn log_closure_amplitudes(
    vis: &VisibilitySet,
    quadrangles: &[(f64, [usize; 4])],
) -> Result<Vec<(f64, f64)>, ForwardError> {
    let index = BaselineIndex::new(&vis.coverage);
    quadrangles
        .iter()
        .map(|&(t, st)| {
            let legs = quadrangle_legs(&index, t, st)?;
            let amp: Vec<f64> = legs.iter().map(|l| vis.vis[l.row].norm()).collect();
            if amp.iter().any(|&a| a == 0.0) {
                return Err(ForwardError::DegenerateQuadrangle { t, stations: st });
            }
            let value = amp[0].ln() + amp[1].ln() - amp[2].ln() - amp[3].ln();
            let var: f64 = legs
                .iter()
                .zip(&amp)
                .map(|(l, a)| (vis.coverage.rows[l.row].sigma / a).powi(2))
                .sum();
            Ok((value, var.sqrt()))
        })
        .collect()
}

/// Closure data for the given geometry, measured from `vis`.
pub fn closure_set(vis: &VisibilitySet, geometry: &ClosureGeometry) -> Result<ClosureSet, ForwardError> {
    let phases = closure_phases(vis, &geometry.triangles)?
        .into_iter()
        .zip(&geometry.triangles)
        .map(|((value, sigma), &(t, stations))| ClosurePhase {
            t,
            stations,
            value,
            sigma,
        })
        .collect();
    let log_amps = log_closure_amplitudes(vis, &geometry.quadrangles)?
        .into_iter()
        .zip(&geometry.quadrangles)
        .map(|((value, sigma), &(t, stations))| LogClosureAmplitude {
            t,
            stations,
            value,
            sigma,
        })
        .collect();
    Ok(ClosureSet { phases, log_amps })
}

/// Closure data-fit of one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosureChi2 {
    /// Sum of both families' squared normalized residuals.
    pub loss: f64,
    pub phase_sum: f64,
    pub amp_sum: f64,
    pub n_phase: usize,
    pub n_amp: usize,
}

impl ClosureChi2 {
    pub fn reduced_phase(&self) -> f64 {
        self.phase_sum / self.n_phase.max(1) as f64
    }

    pub fn reduced_amp(&self) -> f64 {
        self.amp_sum / self.n_amp.max(1) as f64
    }
}

/// Differentiable closure χ² evaluator bound to a coverage and DFT.
pub struct ClosureLikelihood {
    f: DftMatrix,
    data: ClosureSet,
    legs: ClosureLegs,
    /// Multiplier on the loss when used as a data-fit term.
    weight: f64,
}

impl ClosureLikelihood {
    pub fn new(data: ClosureSet, coverage: &UVCoverage, f: DftMatrix) -> Result<Self, ForwardError> {
        if coverage.len() != f.n_vis() {
            return Err(ForwardError::Dimension {
                expected: f.n_vis(),
                got: coverage.len(),
            });
        }
        if let Some(p) = data.phases.iter().find(|p| !(p.sigma > 0.0)) {
            return Err(ForwardError::InvalidCoverage(format!(
                "closure phase {:?} at t={} has non-positive sigma",
                p.stations, p.t
            )));
        }
        if let Some(q) = data.log_amps.iter().find(|q| !(q.sigma > 0.0)) {
            return Err(ForwardError::InvalidCoverage(format!(
                "closure amplitude {:?} at t={} has non-positive sigma",
                q.stations, q.t
            )));
        }
        let legs = resolve(&data, coverage)?;
        Ok(Self {
            f,
            data,
            legs,
            weight: 1.0,
        })
    }

    /// Scales the value returned through [`RowFunction`] (e.g. ½ for a
    /// negative log-likelihood).
    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn dft(&self) -> &DftMatrix {
        &self.f
    }

    pub fn data(&self) -> &ClosureSet {
        &self.data
    }

    /// χ² of one image. Fails if a model leg has zero amplitude.
    pub fn chi2(&self, x: &[f64]) -> Result<ClosureChi2, ForwardError> {
        if x.len() != self.f.n_pixels() {
            return Err(ForwardError::Dimension {
                expected: self.f.n_pixels(),
                got: x.len(),
            });
        }
        let (re, im) = self.f.apply_batch(x, 1);
        self.chi2_from_vis(&re, &im, None)
    }

    /// Core evaluation from model visibilities. With `grad`, writes
    /// `d loss / d (Re V, Im V)` into the two slices (overwriting).
    fn chi2_from_vis(
        &self,
        re: &[f64],
        im: &[f64],
        grad: Option<(&mut [f64], &mut [f64])>,
    ) -> Result<ClosureChi2, ForwardError> {
        let mut grad = grad;
        if let Some((gr, gi)) = grad.as_mut() {
            gr.fill(0.0);
            gi.fill(0.0);
        }
        let vis = |l: Leg| {
            let z = Complex64::new(re[l.row], im[l.row]);
            oriented(z, l)
        };
        let mut phase_sum = 0.0;
        for (p, legs) in self.data.phases.iter().zip(&self.legs.triangles) {
            let v = [vis(legs[0]), vis(legs[1]), vis(legs[2])];
            if v.iter().any(|z| z.norm_sqr() == 0.0) {
                return Err(ForwardError::DegenerateTriangle {
                    t: p.t,
                    stations: p.stations,
                });
            }
            let model = v[0].arg() + v[1].arg() - v[2].arg();
            let res = wrap_phase(p.value - model);
            let w = 1.0 / (p.sigma * p.sigma);
            phase_sum += res * res * w;
            if let Some((gr, gi)) = grad.as_mut() {
                // d loss / d model = −2 res w; d arg s / d(Re s, Im s) = (−Im s, Re s) / |s|²
                let dm = -2.0 * res * w;
                for (k, &leg) in legs.iter().enumerate() {
                    let mut sign = if k == 2 { -1.0 } else { 1.0 };
                    if leg.conj {
                        sign = -sign;
                    }
                    let (a, b) = (re[leg.row], im[leg.row]);
                    let n2 = a * a + b * b;
                    gr[leg.row] -= dm * sign * b / n2;
                    gi[leg.row] += dm * sign * a / n2;
                }
            }
        }
        let mut amp_sum = 0.0;
        for (q, legs) in self.data.log_amps.iter().zip(&self.legs.quadrangles) {
            let v: Vec<Complex64> = legs.iter().map(|&l| vis(l)).collect();
            if v.iter().any(|z| z.norm_sqr() == 0.0) {
                return Err(ForwardError::DegenerateQuadrangle {
                    t: q.t,
                    stations: q.stations,
                });
            }
            let model = 0.5 * (v[0].norm_sqr().ln() + v[1].norm_sqr().ln() - v[2].norm_sqr().ln() - v[3].norm_sqr().ln());
            let res = q.value - model;
            let w = 1.0 / (q.sigma * q.sigma);
            amp_sum += res * res * w;
            if let Some((gr, gi)) = grad.as_mut() {
                let dm = -2.0 * res * w;
                for (k, &leg) in legs.iter().enumerate() {
                    let sign = if k < 2 { 1.0 } else { -1.0 };
                    // log|V| depends only on the stored row's magnitude
                    let (a, b) = (re[leg.row], im[leg.row]);
                    let n2 = a * a + b * b;
                    gr[leg.row] += dm * sign * a / n2;
                    gi[leg.row] += dm * sign * b / n2;
                }
            }
        }
        Ok(ClosureChi2 {
            loss: phase_sum + amp_sum,
            phase_sum,
            amp_sum,
            n_phase: self.data.phases.len(),
            n_amp: self.data.log_amps.len(),
        })
    }

    fn eval(&self, x: &[f64], cols: usize, out: &mut [f64], grad: Option<&mut [f64]>) -> Result<(), (usize, RowError)> {
        if cols != self.f.n_pixels() {
            return Err((0, RowError(format!("expected {} pixels, got {cols}", self.f.n_pixels()))));
        }
        let rows = out.len();
        let k = self.f.n_vis();
        let (re, im) = self.f.apply_batch(x, rows);
        let want_grad = grad.is_some();
        let mut g_re = vec![0.0; if want_grad { rows * k } else { 0 }];
        let mut g_im = g_re.clone();
        for r in 0..rows {
            let span = r * k..(r + 1) * k;
            let g = want_grad.then(|| {
                let gr: &mut [f64] = &mut g_re[span.clone()];
                let gi: &mut [f64] = &mut g_im[span.clone()];
                (gr, gi)
            });
            let c = self
                .chi2_from_vis(&re[span.clone()], &im[span.clone()], g)
                .map_err(|e| (r, RowError(e.to_string())))?;
            out[r] = self.weight * c.loss;
        }
        if let Some(grad) = grad {
            for v in g_re.iter_mut().chain(g_im.iter_mut()) {
                *v *= self.weight;
            }
            grad.copy_from_slice(&self.f.adjoint_batch(&g_re, &g_im, rows));
        }
        Ok(())
    }
}

impl RowFunction for ClosureLikelihood {
    fn name(&self) -> &str {
        "chi2_closure"
    }

    fn value(&self, row: &[f64]) -> Result<f64, RowError> {
        let mut out = [0.0];
        self.eval(row, row.len(), &mut out, None).map_err(|e| e.1)?;
        Ok(out[0])
    }

    fn value_and_grad(&self, row: &[f64], grad: &mut [f64]) -> Result<f64, RowError> {
        let mut out = [0.0];
        self.eval(row, row.len(), &mut out, Some(grad)).map_err(|e| e.1)?;
        Ok(out[0])
    }

    fn batch_value(&self, x: &[f64], cols: usize, out: &mut [f64]) -> Result<(), (usize, RowError)> {
        self.eval(x, cols, out, None)
    }

    fn batch_value_and_grad(&self, x: &[f64], cols: usize, out: &mut [f64], grad: &mut [f64]) -> Result<(), (usize, RowError)> {
        self.eval(x, cols, out, Some(grad))
    }
}

/// Closure χ² of image `x` against `data`.
pub fn chi2_closure(
    x: &[f64],
    data: &ClosureSet,
    coverage: &UVCoverage,
    f: &DftMatrix,
) -> Result<ClosureChi2, ForwardError> {
    ClosureLikelihood::new(data.clone(), coverage, f.clone())?.chi2(x)
}
