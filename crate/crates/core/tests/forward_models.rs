//! Forward-model oracles: naive DFT sums, direct closure products, noise
//! statistics and gradient checks of every data-fit term.

use std::f64::consts::PI;
use std::sync::Arc;

use dpi::diffcore::{check_gradients, Graph, RowFunction, Tensor};
use dpi::forward::*;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(m: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m * m).map(|_| rng.gen_range(0.0..1.0)).collect()
}

fn eht_grid(m: usize) -> ImageGrid {
    ImageGrid::from_uas(m, 160.0).unwrap()
}

fn coverage(sigma_scale: f64) -> UVCoverage {
    let spec = ArraySpec {
        sigma_scale,
        ..ArraySpec::default()
    };
    synthesize_coverage(&spec).unwrap()
}

#[test]
fn zero_frequency_row_is_total_flux() {
    let grid = eht_grid(32);
    let f = build_dft_matrix(&grid, &[(0.0, 0.0)]);
    let x = crescent(&grid, 2.0);
    let v = f.apply(&x)[0];
    assert!((v.re - 2.0).abs() < 1e-12 && v.im.abs() < 1e-12, "{v}");
    for j in 0..grid.dim() {
        assert_eq!(f.entry(0, j), Complex64::new(1.0, 0.0));
    }
}

#[test]
fn centered_delta_has_flat_real_spectrum() {
    let grid = eht_grid(16);
    let cov = coverage(5e-6);
    let f = DftMatrix::from_coverage(&grid, &cov);
    let mut x = vec![0.0; grid.dim()];
    x[8 * 16 + 8] = 1.7;
    for v in f.apply(&x) {
        assert!((v.re - 1.7).abs() < 1e-12 && v.im.abs() < 1e-12);
    }
}

#[test]
fn dft_matches_naive_double_loop() {
    let grid = ImageGrid::from_uas(8, 100.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let uv: Vec<(f64, f64)> = (0..5).map(|_| (rng.gen_range(-8e9..8e9), rng.gen_range(-8e9..8e9))).collect();
    let x = random_image(8, 4);
    let f = build_dft_matrix(&grid, &uv);
    let got = f.apply(&x);
    let dx = grid.fov / 8.0;
    for (k, &(u, v)) in uv.iter().enumerate() {
        let mut want = Complex64::new(0.0, 0.0);
        for r in 0..8 {
            for c in 0..8 {
                let l = (c as f64 - 4.0) * dx;
                let m = (r as f64 - 4.0) * dx;
                want += x[r * 8 + c] * Complex64::from_polar(1.0, -2.0 * PI * (u * l + v * m));
            }
        }
        assert!((got[k] - want).norm() <= 1e-12, "{} vs {}", got[k], want);
    }
}

#[test]
fn thermal_sigma_cases() {
    assert_eq!(thermal_sigma(4.0, 9.0, 1.0), 6.0);
    assert!((thermal_sigma(3.0, 3.0, 0.5) - 1.5).abs() < 1e-15);
    assert_eq!(thermal_sigma(0.0, 9.0, 2.0), 0.0);
}

#[test]
fn synthetic_coverage_is_well_formed() {
    let cov = coverage(5e-6);
    assert!(cov.len() > 100);
    assert!(cov.rows.iter().all(|r| r.a < r.b && r.sigma > 0.0));
    let longest = cov.rows.iter().map(|r| r.u.hypot(r.v)).fold(0.0, f64::max);
    // Earth-diameter baselines at 1.3 mm
    assert!(longest > 5e9 && longest < 1e10, "{longest:e}");
}

#[test]
fn noiseless_unit_gain_simulation_is_exact() {
    let grid = eht_grid(16);
    let cov = coverage(5e-6);
    let f = DftMatrix::from_coverage(&grid, &cov);
    let x = crescent(&grid, 2.0);
    let y = simulate_visibilities(&x, &f, &cov, &StationGains::default(), None).unwrap();
    assert_eq!(y.vis, f.apply(&x));
    assert_eq!(chi2_vis(&x, &y, &f).unwrap(), 0.0);
}

#[test]
fn station_gain_scales_its_baselines() {
    let grid = eht_grid(16);
    let cov = coverage(5e-6);
    let f = DftMatrix::from_coverage(&grid, &cov);
    let x = crescent(&grid, 2.0);
    let clean = simulate_visibilities(&x, &f, &cov, &StationGains::default(), None).unwrap();
    let mut gains = StationGains::default();
    for r in &cov.rows {
        gains.set(r.t, 2, 2.0, 0.0);
    }
    let y = simulate_visibilities(&x, &f, &cov, &gains, None).unwrap();
    for ((r, a), b) in cov.rows.iter().zip(&y.vis).zip(&clean.vis) {
        let want = if r.a == 2 || r.b == 2 { 2.0 } else { 1.0 };
        assert!((a.norm() - want * b.norm()).abs() <= 1e-12 * b.norm().max(1.0));
    }
    let geo = closure_geometry(&cov);
    let c0 = closure_set(&clean, &geo).unwrap();
    let c1 = closure_set(&y, &geo).unwrap();
    for (p, q) in c0.phases.iter().zip(&c1.phases) {
        assert!((p.value - q.value).abs() <= 1e-10);
    }
    for (p, q) in c0.log_amps.iter().zip(&c1.log_amps) {
        assert!((p.value - q.value).abs() <= 1e-10);
    }
}

#[test]
fn thermal_noise_has_requested_std() {
    let grid = ImageGrid::new(2, 1.0).unwrap();
    let rows: Vec<CoverageRow> = (0..10_000)
        .map(|i| CoverageRow {
            t: i as f64,
            a: 0,
            b: 1,
            u: 0.0,
            v: 0.0,
            sigma: 0.1,
        })
        .collect();
    let cov = UVCoverage::new(rows).unwrap();
    let f = DftMatrix::from_coverage(&grid, &cov);
    let y = simulate_visibilities(&[0.0; 4], &f, &cov, &StationGains::default(), Some(17)).unwrap();
    let n = y.vis.len() as f64;
    let mean = y.vis.iter().map(|v| v.re).sum::<f64>() / n;
    let std = (y.vis.iter().map(|v| (v.re - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((0.097..=0.103).contains(&std), "{std}");
}

#[test]
fn chi2_vis_single_datum_and_naive_form() {
    let grid = ImageGrid::new(2, 1.0).unwrap();
    let cov = UVCoverage::new(vec![CoverageRow {
        t: 0.0,
        a: 0,
        b: 1,
        u: 0.0,
        v: 0.0,
        sigma: 0.3,
    }])
    .unwrap();
    let f = DftMatrix::from_coverage(&grid, &cov);
    let x = [0.25; 4];
    let y = VisibilitySet::new(cov.clone(), vec![Complex64::new(1.0 + 0.6, 0.0)]).unwrap();
    let got = chi2_vis(&x, &y, &f).unwrap();
    assert!((got - 0.36 / (2.0 * 0.09)).abs() < 1e-12, "{got}");

    let grid = eht_grid(8);
    let cov = coverage(5e-6);
    let f = DftMatrix::from_coverage(&grid, &cov);
    let x = random_image(8, 8);
    let y = simulate_visibilities(&random_image(8, 9), &f, &cov, &StationGains::default(), Some(1)).unwrap();
    let mut naive = 0.0;
    for (k, row) in cov.rows.iter().enumerate() {
        let mut model = Complex64::new(0.0, 0.0);
        for (j, xj) in x.iter().enumerate() {
            model += f.entry(k, j) * xj;
        }
        let r = y.vis[k] - model;
        naive += 0.5 * (r.re * r.re + r.im * r.im) / (row.sigma * row.sigma);
    }
    let got = chi2_vis(&x, &y, &f).unwrap();
    assert!((got - naive).abs() <= 1e-12 * naive, "{got} {naive}");
}

#[test]
fn point_source_closures_vanish() {
    let grid = eht_grid(16);
    let cov = coverage(5e-6);
    let f = DftMatrix::from_coverage(&grid, &cov);
    let mut x = vec![0.0; grid.dim()];
    x[8 * 16 + 8] = 1.0;
    let y = simulate_visibilities(&x, &f, &cov, &StationGains::default(), None).unwrap();
    let geo = closure_geometry(&cov);
    assert!(!geo.triangles.is_empty() && !geo.quadrangles.is_empty());
    let set = closure_set(&y, &geo).unwrap();
    assert!(set.phases.iter().all(|p| p.value.abs() < 1e-12));
    assert!(set.log_amps.iter().all(|q| q.value.abs() < 1e-12));
}

#[test]
fn closures_match_direct_products() {
    let grid = eht_grid(16);
    let cov = coverage(5e-6);
    let f = DftMatrix::from_coverage(&grid, &cov);
    let x = random_image(16, 10);
    let y = simulate_visibilities(&x, &f, &cov, &StationGains::default(), Some(2)).unwrap();
    let find = |t: f64, a: usize, b: usize| {
        cov.rows
            .iter()
            .position(|r| r.t == t && r.a == a && r.b == b)
            .map(|i| y.vis[i])
            .unwrap()
    };
    let geo = closure_geometry(&cov);
    let set = closure_set(&y, &geo).unwrap();
    for p in &set.phases {
        let [a, b, c] = p.stations;
        let bis = find(p.t, a, b) * find(p.t, b, c) * find(p.t, a, c).conj();
        assert!(wrap_phase(bis.arg() - p.value).abs() <= 1e-10);
        let var = [find(p.t, a, b), find(p.t, b, c), find(p.t, a, c)]
            .iter()
            .zip([(a, b), (b, c), (a, c)])
            .map(|(v, (s, e))| {
                let sig = cov.rows.iter().find(|r| r.t == p.t && r.a == s && r.b == e).unwrap().sigma;
                (sig / v.norm()).powi(2)
            })
            .sum::<f64>();
        assert!((p.sigma - var.sqrt()).abs() <= 1e-12 * p.sigma);
    }
    for q in &set.log_amps {
        let [a, b, c, d] = q.stations;
        let ratio = find(q.t, a, b).norm() * find(q.t, c, d).norm() / (find(q.t, a, c).norm() * find(q.t, b, d).norm());
        assert!((ratio.ln() - q.value).abs() <= 1e-10);
    }
}

#[test]
fn reversed_baseline_rows_are_conjugated() {
    let grid = eht_grid(16);
    let cov = coverage(5e-6);
    let f = DftMatrix::from_coverage(&grid, &cov);
    let x = random_image(16, 11);
    let y = simulate_visibilities(&x, &f, &cov, &StationGains::default(), None).unwrap();
    let geo = closure_geometry(&cov);
    let want = closure_set(&y, &geo).unwrap();
    // store every row as (b, a) with the conjugate visibility and negated (u, v)
    let flipped_rows: Vec<CoverageRow> = cov
        .rows
        .iter()
        .map(|r| CoverageRow {
            a: r.b,
            b: r.a,
            u: -r.u,
            v: -r.v,
            ..*r
        })
        .collect();
    let flipped = UVCoverage::new(flipped_rows).unwrap();
    let yf = VisibilitySet::new(flipped.clone(), y.vis.iter().map(|v| v.conj()).collect()).unwrap();
    let got = closure_set(&yf, &closure_geometry(&flipped)).unwrap();
    assert_eq!(got.phases.len(), want.phases.len());
    for (p, q) in got.phases.iter().zip(&want.phases) {
        assert!(wrap_phase(p.value - q.value).abs() < 1e-10);
    }
    let ff = DftMatrix::from_coverage(&grid, &flipped);
    let c = chi2_closure(&x, &want, &flipped, &ff).unwrap();
    assert!(c.loss < 1e-16, "{}", c.loss);
}

#[test]
fn degenerate_leg_is_reported() {
    let cov = UVCoverage::new(vec![
        CoverageRow { t: 0.0, a: 0, b: 1, u: 1.0, v: 0.0, sigma: 1.0 },
        CoverageRow { t: 0.0, a: 1, b: 2, u: 2.0, v: 0.0, sigma: 1.0 },
        CoverageRow { t: 0.0, a: 0, b: 2, u: 3.0, v: 0.0, sigma: 1.0 },
    ])
    .unwrap();
    let y = VisibilitySet::new(
        cov.clone(),
        vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 1.0)],
    )
    .unwrap();
    let geo = closure_geometry(&cov);
    assert!(matches!(
        closure_phases(&y, &geo.triangles),
        Err(ForwardError::DegenerateTriangle { .. })
    ));
}

#[test]
fn single_triangle_contribution() {
    let grid = ImageGrid::new(2, 1.0).unwrap();
    let cov = UVCoverage::new(vec![
        CoverageRow { t: 0.0, a: 0, b: 1, u: 0.0, v: 0.0, sigma: 1.0 },
        CoverageRow { t: 0.0, a: 1, b: 2, u: 0.0, v: 0.0, sigma: 1.0 },
        CoverageRow { t: 0.0, a: 0, b: 2, u: 0.0, v: 0.0, sigma: 1.0 },
    ])
    .unwrap();
    let f = DftMatrix::from_coverage(&grid, &cov);
    let x = [0.25; 4];
    // model phase 0, data π/2, σ = π/4
    let mut set = ClosureSet {
        phases: vec![ClosurePhase {
            t: 0.0,
            stations: [0, 1, 2],
            value: PI / 2.0,
            sigma: PI / 4.0,
        }],
        log_amps: vec![],
    };
    let c = chi2_closure(&x, &set, &cov, &f).unwrap();
    assert!((c.loss - 4.0).abs() < 1e-12);
    assert!((c.reduced_phase() - 4.0).abs() < 1e-12);
    set.phases[0].value += 2.0 * PI;
    assert!((chi2_closure(&x, &set, &cov, &f).unwrap().loss - 4.0).abs() < 1e-12);
}

/// Mean reduced χ² of the truth over independent noise draws.
fn truth_reduced_chi2(seeds: std::ops::Range<u64>) -> Vec<(f64, f64, f64)> {
    let grid = eht_grid(16);
    let cov = coverage(2e-6);
    let f = DftMatrix::from_coverage(&grid, &cov);
    let x = crescent(&grid, 2.0);
    let geo = closure_geometry(&cov);
    let lik = |y: &VisibilitySet| 2.0 * chi2_vis(&x, y, &f).unwrap() / (2.0 * cov.len() as f64);
    seeds
        .map(|seed| {
            let y = simulate_visibilities(&x, &f, &cov, &StationGains::default(), Some(seed)).unwrap();
            let data = closure_set(&y, &geo).unwrap();
            let c = chi2_closure(&x, &data, &cov, &f).unwrap();
            (lik(&y), c.reduced_phase(), c.reduced_amp())
        })
        .collect()
}

#[test]
fn truth_reduced_chi2_is_near_one() {
    for (vis, ph, amp) in truth_reduced_chi2(0..50) {
        for v in [vis, ph, amp] {
            assert!((0.7..=1.3).contains(&v), "vis {vis} phase {ph} amp {amp}");
        }
    }
}

fn assert_row_gradients(f: Arc<dyn RowFunction>, x: Tensor, what: &str) {
    let mut g = Graph::new();
    let p = g.param(x);
    let y = g.rowwise(p, f);
    let root = g.sum(y);
    let report = check_gradients(&mut g, &[], root, 1e-5, 1e-4).unwrap();
    assert!(report.passed, "{what}: {:e}", report.max_rel_error());
}

#[test]
fn data_fit_gradients_match_finite_differences() {
    let grid = eht_grid(8);
    let cov = coverage(5e-3);
    let f = DftMatrix::from_coverage(&grid, &cov);
    let truth = crescent(&grid, 2.0);
    let y = simulate_visibilities(&truth, &f, &cov, &StationGains::default(), Some(5)).unwrap();
    let data = closure_set(&y, &closure_geometry(&cov)).unwrap();
    let vis = Arc::new(VisLikelihood::new(&y, f.clone()).unwrap());
    let clo = Arc::new(ClosureLikelihood::new(data, &cov, f).unwrap().with_weight(0.5));
    let mask = variable_density_masks(8, &[2.0], MaskDensity::default(), 3).unwrap().remove(0);
    let phantom = knee_phantom(8);
    let mri = Arc::new(MriLikelihood::new(simulate_mri(&phantom, &mask, 0.01, 4).unwrap()).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for instance in 0..20 {
        let batch: Vec<f64> = (0..3 * 64).map(|i| truth[i % 64] + rng.gen_range(0.0..0.02)).collect();
        let xb = Tensor::matrix(3, 64, batch).unwrap();
        assert_row_gradients(vis.clone(), xb.clone(), &format!("vis #{instance}"));
        assert_row_gradients(clo.clone(), xb, &format!("closure #{instance}"));
        let mb: Vec<f64> = (0..3 * 64).map(|i| phantom[i % 64] + rng.gen_range(-0.05..0.05)).collect();
        assert_row_gradients(mri.clone(), Tensor::matrix(3, 64, mb).unwrap(), &format!("mri #{instance}"));
    }
}

#[test]
fn batched_and_single_row_likelihoods_agree() {
    let grid = eht_grid(8);
    let cov = coverage(5e-3);
    let f = DftMatrix::from_coverage(&grid, &cov);
    let truth = crescent(&grid, 2.0);
    let y = simulate_visibilities(&truth, &f, &cov, &StationGains::default(), Some(5)).unwrap();
    let data = closure_set(&y, &closure_geometry(&cov)).unwrap();
    let fns: Vec<Box<dyn RowFunction>> = vec![
        Box::new(VisLikelihood::new(&y, f.clone()).unwrap()),
        Box::new(ClosureLikelihood::new(data, &cov, f).unwrap()),
    ];
    let xb: Vec<f64> = (0..4 * 64).map(|i| truth[i % 64] * (1.0 + 0.1 * (i / 64) as f64)).collect();
    for func in &fns {
        let mut out = vec![0.0; 4];
        let mut grad = vec![0.0; 4 * 64];
        func.batch_value_and_grad(&xb, 64, &mut out, &mut grad).unwrap();
        for r in 0..4 {
            let row = &xb[r * 64..(r + 1) * 64];
            let mut g1 = vec![0.0; 64];
            let v1 = func.value_and_grad(row, &mut g1).unwrap();
            assert!((v1 - out[r]).abs() <= 1e-12 * v1.abs().max(1.0));
            assert!((func.value(row).unwrap() - v1).abs() <= 1e-12 * v1.abs().max(1.0));
            for (a, b) in g1.iter().zip(&grad[r * 64..(r + 1) * 64]) {
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }
}

#[test]
fn full_mask_mri_is_invertible() {
    let x = knee_phantom(16);
    let y = mri_forward(&x, &MriMask::full(16)).unwrap();
    let back = ifft2_centered(&y, 16);
    for (a, b) in x.iter().zip(&back) {
        assert!((a - b.re).abs() <= 1e-10 && b.im.abs() <= 1e-10);
    }
    let dc = mri_forward(&x, &MriMask::dc_only(16)).unwrap();
    assert_eq!(dc.len(), 1);
    assert!((dc[0].re - x.iter().sum::<f64>()).abs() < 1e-10 && dc[0].im.abs() < 1e-10);
}

#[test]
fn centered_fft_matches_naive_sum_for_odd_and_even_sizes() {
    for m in [5usize, 6] {
        let x = random_image(m, m as u64);
        let k = fft2_centered(&x, m);
        let h = (m / 2) as f64;
        for p in 0..m {
            for q in 0..m {
                let mut want = Complex64::new(0.0, 0.0);
                for r in 0..m {
                    for c in 0..m {
                        let ph = -2.0 * PI * ((p as f64 - h) * (r as f64 - h) + (q as f64 - h) * (c as f64 - h)) / m as f64;
                        want += x[r * m + c] * Complex64::from_polar(1.0, ph);
                    }
                }
                assert!((k[p * m + q] - want).norm() < 1e-10);
            }
        }
    }
}

#[test]
fn mri_noise_and_chi2() {
    let x = knee_phantom(16);
    let mask = MriMask::full(16);
    let data = simulate_mri(&x, &mask, DEFAULT_NOISE_FRACTION, 9).unwrap();
    assert!((data.sigma - 0.0004 * x.iter().sum::<f64>()).abs() < 1e-12);
    // χ² of the truth is about half the number of real terms
    let c = chi2_mri(&x, &data).unwrap();
    let n = 2.0 * mask.count() as f64;
    assert!((c / (0.5 * n) - 1.0).abs() < 0.15, "{c}");
    // full mask, zero noise: the inverse transform recovers x exactly
    let clean = mri_forward(&x, &mask).unwrap();
    let back = ifft2_centered(&clean, 16);
    let exact = KSpaceData {
        mask: mask.clone(),
        values: clean,
        sigma: 1.0,
    };
    let recovered: Vec<f64> = back.iter().map(|z| z.re).collect();
    assert!(chi2_mri(&recovered, &exact).unwrap() < 1e-18);
}

#[test]
fn variable_density_masks_are_nested() {
    let masks = variable_density_masks(32, &[3.5, 5.5, 8.4], MaskDensity::default(), 1).unwrap();
    for (mask, acc) in masks.iter().zip([3.5, 5.5, 8.4]) {
        assert!((mask.acceleration() - acc).abs() / acc < 0.01, "{}", mask.acceleration());
        assert!(mask.mask[16 * 32 + 16], "DC must be sampled");
    }
    assert!(masks[2].is_subset_of(&masks[1]) && masks[1].is_subset_of(&masks[0]));
    assert!(MriMask::new(4, vec![false; 16]).is_err());
}

#[test]
fn toy_potential_cases() {
    let s = ToyPotential::sinusoidal();
    for x1 in [-2.0, -0.3, 0.0, 1.1] {
        assert!(s.value([x1, (2.0 * PI * x1 / 4.0).sin()]).abs() < 1e-15);
    }
    let single = ToyPotential::gaussian_mixture(vec![GmmComponent::new(1.0, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]).unwrap()]).unwrap();
    assert!((single.value([0.0, 0.0]) - 1.8378771).abs() < 1e-7);
    let b = ToyPotential::bowtie();
    assert!((b.value([0.0, 0.04]) - 0.5).abs() < 1e-12);
    for pot in [ToyPotential::default_mixture(), ToyPotential::bowtie(), ToyPotential::sinusoidal()] {
        let n = 401;
        let h = 16.0 / (n - 1) as f64;
        let mut z = 0.0;
        for i in 0..n {
            for j in 0..n {
                z += (-pot.value([-8.0 + i as f64 * h, -8.0 + j as f64 * h])).exp();
            }
        }
        z *= h * h;
        assert!(z.is_finite() && z > 0.0, "{}: {z}", pot.name());
    }
}

#[test]
fn toy_potential_gradients_match_finite_differences() {
    let pots = [
        ToyPotential::default_mixture(),
        ToyPotential::bowtie(),
        ToyPotential::Sinusoidal {
            amplitude: 1.0,
            period: 4.0,
            width: 0.4,
            confine: Some(2.0),
        },
        ToyPotential::Gaussian { sigma: 0.7 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        for pot in &pots {
            // keep away from the bowtie kink at x₁ = 0
            let data: Vec<f64> = (0..8)
                .map(|i| {
                    let v: f64 = rng.gen_range(0.1..2.5);
                    if i % 2 == 0 && rng.gen_bool(0.5) { -v } else if rng.gen_bool(0.5) { v } else { -v }
                })
                .collect();
            assert_row_gradients(Arc::new(pot.clone()), Tensor::matrix(4, 2, data).unwrap(), pot.name());
        }
    }
}

#[test]
fn synthetic_images_have_requested_flux() {
    let grid = eht_grid(32);
    for img in [
        crescent(&grid, 2.0),
        asymmetric_ring(&grid, 2.0, 0.15, 0.03, 0.8, 0.5),
        gaussian_blob(&grid, 2.0, 0.1, (0.0, 0.0)),
    ] {
        assert!((img.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        assert!(img.iter().all(|&v| v >= 0.0));
    }
    let k = knee_phantom(32);
    assert!(k.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(k.iter().cloned().fold(0.0, f64::max) > 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn closures_are_invariant_to_station_corruptions(seed in any::<u64>(), img in any::<u64>()) {
        let grid = eht_grid(8);
        let cov = coverage(5e-6);
        let f = DftMatrix::from_coverage(&grid, &cov);
        let x = random_image(8, img);
        let clean = simulate_visibilities(&x, &f, &cov, &StationGains::default(), None).unwrap();
        let gains = StationGains::random(&cov, (0.5, 2.0), seed);
        let dirty = simulate_visibilities(&x, &f, &cov, &gains, None).unwrap();
        let geo = closure_geometry(&cov);
        let a = closure_set(&clean, &geo).unwrap();
        let b = closure_set(&dirty, &geo).unwrap();
        for (p, q) in a.phases.iter().zip(&b.phases) {
            prop_assert!(wrap_phase(p.value - q.value).abs() <= 1e-10);
        }
        for (p, q) in a.log_amps.iter().zip(&b.log_amps) {
            prop_assert!((p.value - q.value).abs() <= 1e-10);
        }
    }

    #[test]
    fn dft_is_linear(alpha in -3.0f64..3.0, s1 in any::<u64>(), s2 in any::<u64>()) {
        let grid = eht_grid(8);
        let cov = coverage(5e-6);
        let f = DftMatrix::from_coverage(&grid, &cov);
        let x1 = random_image(8, s1);
        let x2 = random_image(8, s2);
        let mix: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| alpha * a + b).collect();
        let (f1, f2, fm) = (f.apply(&x1), f.apply(&x2), f.apply(&mix));
        for k in 0..fm.len() {
            prop_assert!((fm[k] - (alpha * f1[k] + f2[k])).norm() <= 1e-12 * (1.0 + fm[k].norm()));
        }
    }

    #[test]
    fn wrap_phase_lands_in_half_open_interval(x in -100.0f64..100.0) {
        let w = wrap_phase(x);
        prop_assert!(w > -PI && w <= PI);
        prop_assert!(((x - w) / (2.0 * PI) - ((x - w) / (2.0 * PI)).round()).abs() < 1e-9);
    }
}
