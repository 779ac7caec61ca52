//! Regularizer oracles: explicit inverses, naive loops, spectrum fits and
//! finite-difference gradients.

use std::sync::Arc;

use dpi::diffcore::{check_gradients, Graph, Tensor};
use dpi::priors::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.5
}

fn random_image(m: usize, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec<f64> {
    (0..m * m).map(|_| rng.gen_range(lo..hi)).collect()
}

#[test]
fn gaussian_reg_cases() {
    let mu = vec![0.5, -1.0, 2.0];
    let p = GaussianPrior::new(mu.clone(), DMatrix::identity(3, 3)).unwrap();
    assert_eq!(gaussian_reg(&mu, &p).unwrap(), 0.0);
    let x = vec![1.5, -1.0, 2.0];
    assert!((gaussian_reg(&x, &p).unwrap() - 0.5).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cov = random_spd(6, &mut rng);
    let mu: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let p = GaussianPrior::new(mu.clone(), cov.clone()).unwrap();
    let inv = cov.try_inverse().unwrap();
    for _ in 0..10 {
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let d = nalgebra::DVector::from_iterator(6, x.iter().zip(&mu).map(|(a, b)| a - b));
        let want = 0.5 * (d.transpose() * &inv * &d)[(0, 0)];
        assert!((gaussian_reg(&x, &p).unwrap() - want).abs() <= 1e-10 * want.max(1.0));
    }
}

#[test]
fn gaussian_rejects_non_spd() {
    let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(matches!(GaussianPrior::new(vec![0.0; 2], bad), Err(PriorError::NotPositiveDefinite(_))));
    let asym = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.0, 2.0]);
    assert!(GaussianPrior::new(vec![0.0; 2], asym).is_err());
}

#[test]
fn gaussian_gradient_vanishes_at_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = 3;
    let cov = random_spd(m * m, &mut rng);
    let mu: Vec<f64> = (0..m * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let spec = PriorSpec::gaussian(GaussianPrior::new(mu.clone(), cov).unwrap(), m, 1.0).unwrap();
    let mut grad = vec![1.0; m * m];
    let v = dpi::diffcore::RowFunction::value_and_grad(&spec, &mu, &mut grad).unwrap();
    assert_eq!(v, 0.0);
    assert!(grad.iter().all(|g| g.abs() <= 1e-12));
}

#[test]
fn flat_spectrum_gives_scaled_identity() {
    let c = build_power_spectrum_cov(4, 0.0, 1.0, 2.5).unwrap();
    let dense = c.dense();
    let want = DMatrix::<f64>::identity(16, 16) * 2.5;
    assert!((dense - want).amax() < 1e-12);
}

#[test]
fn spectrum_covariance_is_symmetric_positive_definite() {
    for (m, kappa) in [(4, 1.0), (6, 2.0), (8, 3.0)] {
        let c = build_power_spectrum_cov(m, kappa, 0.05, 1.0).unwrap();
        let dense = c.dense();
        assert!((&dense - dense.transpose()).amax() <= 1e-12);
        let eig = dense.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > 0.0, "M={m}: {min}");
        // pixel variance as requested
        assert!((dense[(0, 0)] - 1.0).abs() < 1e-12);
        // eigenvalues are the stored spectrum
        let mut a: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        let mut b = c.spectrum.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-10 * y.max(1.0));
        }
    }
}

#[test]
fn spectrum_samples_follow_target_slope() {
    let m = 32;
    let kappa = 2.5;
    let floor = 0.02;
    let c = build_power_spectrum_cov(m, kappa, floor, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut power = vec![0.0; m * m];
    let n = 200;
    for _ in 0..n {
        let x = c.sample(&mut rng);
        let k = dpi::forward::fft2_centered(&x, m);
        for (p, z) in power.iter_mut().zip(k) {
            *p += z.norm_sqr() / n as f64;
        }
    }
    // radial bins by integer frequency index (centered layout)
    let h = (m / 2) as f64;
    let mut sums = vec![(0.0, 0.0, 0usize); m / 2];
    for p in 0..m {
        for q in 0..m {
            let r = ((p as f64 - h).powi(2) + (q as f64 - h).powi(2)).sqrt();
            let bin = r.round() as usize;
            if bin >= 1 && bin < m / 2 {
                let f = r / m as f64;
                sums[bin].0 += (f + floor).ln();
                sums[bin].1 += power[p * m + q].ln();
                sums[bin].2 += 1;
            }
        }
    }
    let pts: Vec<(f64, f64)> = sums
        .iter()
        .filter(|s| s.2 > 0)
        .map(|s| (s.0 / s.2 as f64, s.1 / s.2 as f64))
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + kappa).abs() <= 0.1 * kappa, "slope {slope}");
}

#[test]
fn constant_image_cases() {
    let m = 5;
    let x = vec![0.7; m * m];
    let tv = smooth_reg(&x, m, &SmoothKind::tv()).unwrap();
    assert!((tv - TV_EPSILON * (m * m) as f64).abs() < 1e-20);
    assert_eq!(smooth_reg(&x, m, &SmoothKind::Tsv).unwrap(), 0.0);
    let mem = smooth_reg(&x, m, &SmoothKind::mem(x.clone()).unwrap()).unwrap();
    // x ln(1 + eps/x) <= eps per pixel
    assert!(mem >= 0.0 && mem <= MEM_EPSILON * (m * m) as f64);
    let bright = vec![2.0; m * m];
    let mem = smooth_reg(&bright, m, &SmoothKind::mem(bright.clone()).unwrap()).unwrap();
    assert!(mem <= MEM_EPSILON * bright.iter().sum::<f64>());
}

#[test]
fn vertical_step_tsv() {
    let m = 7;
    let h = 1.3;
    let x: Vec<f64> = (0..m * m).map(|i| if i % m >= 3 { h } else { 0.0 }).collect();
    let tsv = smooth_reg(&x, m, &SmoothKind::Tsv).unwrap();
    assert!((tsv - m as f64 * h * h).abs() < 1e-12);
}

fn naive(x: &[f64], m: usize, kind: &str, p: &[f64]) -> f64 {
    let at = |r: usize, c: usize| x[r * m + c];
    let mut total = 0.0;
    for r in 0..m {
        for c in 0..m {
            let right = if c == m - 1 { at(r, c) } else { at(r, c + 1) };
            let below = if r == m - 1 { at(r, c) } else { at(r + 1, c) };
            let (dh, dv) = (right - at(r, c), below - at(r, c));
            total += match kind {
                "tv" => (dh * dh + dv * dv + 1e-16).sqrt(),
                "tsv" => dh * dh + dv * dv,
                "l1" => at(r, c).abs(),
                _ => at(r, c) * ((at(r, c) + 1e-12) / p[r * m + c]).ln(),
            };
        }
    }
    total
}

#[test]
fn regularizers_match_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let m = 6;
        let x = random_image(m, &mut rng, 0.0, 2.0);
        let p = random_image(m, &mut rng, 0.1, 1.0);
        for (name, kind) in [
            ("tv", SmoothKind::tv()),
            ("tsv", SmoothKind::Tsv),
            ("l1", SmoothKind::L1),
            ("mem", SmoothKind::mem(p.clone()).unwrap()),
        ] {
            let got = smooth_reg(&x, m, &kind).unwrap();
            let want = naive(&x, m, name, &p);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{name}: {got} {want}");
        }
    }
}

#[test]
fn mem_rejects_negative_pixels() {
    let kind = SmoothKind::mem(vec![1.0; 4]).unwrap();
    assert!(matches!(smooth_reg(&[0.1, -0.2, 0.3, 0.4], 2, &kind), Err(PriorError::Domain(_))));
    assert!(SmoothKind::mem(vec![1.0, 0.0, 1.0, 1.0]).is_err());
}

#[test]
fn prior_spec_combines_weighted_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = 4;
    let cov = random_spd(m * m, &mut rng);
    let mu = random_image(m, &mut rng, 0.0, 1.0);
    let g = GaussianPrior::new(mu, cov).unwrap();
    let p = random_image(m, &mut rng, 0.5, 1.0);
    let spec = PriorSpec::new(m)
        .with_term(0.3, PriorKind::Gaussian(Arc::new(g.clone())))
        .unwrap()
        .with_term(2.0, PriorKind::Smooth(SmoothKind::Tsv))
        .unwrap()
        .with_term(0.7, PriorKind::Smooth(SmoothKind::mem(p.clone()).unwrap()))
        .unwrap();
    let x = random_image(m, &mut rng, 0.1, 1.0);
    let want = 0.3 * gaussian_reg(&x, &g).unwrap()
        + 2.0 * smooth_reg(&x, m, &SmoothKind::Tsv).unwrap()
        + 0.7 * smooth_reg(&x, m, &SmoothKind::mem(p).unwrap()).unwrap();
    assert!((spec.value(&x).unwrap() - want).abs() < 1e-12);
    assert!(PriorSpec::new(m).with_term(-1.0, PriorKind::Smooth(SmoothKind::L1)).is_err());
    assert!(PriorSpec::new(3).with_term(1.0, PriorKind::Gaussian(Arc::new(g))).is_err());
}

#[test]
fn regularizer_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = 5;
    for instance in 0..20 {
        let cov = random_spd(m * m, &mut rng);
        let mu = random_image(m, &mut rng, 0.0, 1.0);
        let p = random_image(m, &mut rng, 0.2, 1.0);
        let kinds = vec![
            ("gaussian", PriorKind::Gaussian(Arc::new(GaussianPrior::new(mu, cov).unwrap()))),
            ("tv", PriorKind::Smooth(SmoothKind::tv())),
            ("tsv", PriorKind::Smooth(SmoothKind::Tsv)),
            ("l1", PriorKind::Smooth(SmoothKind::L1)),
            ("mem", PriorKind::Smooth(SmoothKind::mem(p).unwrap())),
        ];
        for (name, kind) in kinds {
            let spec = Arc::new(PriorSpec::new(m).with_term(1.3, kind).unwrap());
            // positive pixels at least 0.05 from zero keep l1 and mem smooth
            let x: Vec<f64> = (0..3 * m * m).map(|_| rng.gen_range(0.05..2.0)).collect();
            let mut g = Graph::new();
            let xp = g.param(Tensor::matrix(3, m * m, x).unwrap());
            let y = g.rowwise(xp, spec);
            let root = g.sum(y);
            let report = check_gradients(&mut g, &[], root, 1e-5, 1e-4).unwrap();
            assert!(report.passed, "{name} #{instance}: {:e}", report.max_rel_error());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regularizers_are_non_negative_and_scale_correctly(seed in any::<u64>(), alpha in -4.0f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = 6;
        let x = random_image(m, &mut rng, -2.0, 2.0);
        let ax: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        let tsv = smooth_reg(&x, m, &SmoothKind::Tsv).unwrap();
        let l1 = smooth_reg(&x, m, &SmoothKind::L1).unwrap();
        let tv = smooth_reg(&x, m, &SmoothKind::tv()).unwrap();
        prop_assert!(tsv >= 0.0 && l1 >= 0.0 && tv >= TV_EPSILON * (m * m) as f64 * (1.0 - 1e-12));
        prop_assert!((smooth_reg(&ax, m, &SmoothKind::Tsv).unwrap() - alpha * alpha * tsv).abs() <= 1e-12 * (1.0 + tsv * alpha * alpha));
        prop_assert!((smooth_reg(&ax, m, &SmoothKind::L1).unwrap() - alpha.abs() * l1).abs() <= 1e-12 * (1.0 + l1 * alpha.abs()));
        let pos: Vec<f64> = x.iter().map(|v| v.abs()).collect();
        let p = random_image(m, &mut rng, 0.1, 3.0);
        let flux_p: f64 = p.iter().sum();
        let flux_x: f64 = pos.iter().sum();
        // Gibbs: with matched total flux the entropy term is non-negative
        let scaled: Vec<f64> = p.iter().map(|v| v * flux_x / flux_p).collect();
        prop_assert!(smooth_reg(&pos, m, &SmoothKind::mem(scaled).unwrap()).unwrap() >= -1e-9);
    }
}
