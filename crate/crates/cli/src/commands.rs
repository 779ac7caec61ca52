//! Subcommand implementations.
//!
//! Layout under the output directory:
//!
//! ```text
//! data/        truth.csv, coverage.csv, vis.csv, closure_*.csv, mask_<R>x.csv, kspace_<R>x.csv
//! train/       loss.csv, model.ckpt (+ .bin), checkpoints/step_NNNNNN.ckpt
//! samples.csv
//! stats/       mean, std, cov, embedding, coverage, chi2, modes/
//! oracle/      analytic mean/std and comparison metrics, or toy KL
//! toy_sweep/   beta_<β>/ runs and kl_vs_beta.csv
//! mri/         <R>x/ runs and mri_report.csv
//! manifest_<command>.json
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use dpi::analysis::{
    align_normalize, analytic_posterior, cluster_modes_scored, coverage_fraction, gaussian_kl, grid_log_partition,
    kl_monte_carlo, pca_embed, sample_stats, AlignReference, GridBox, PosteriorSampleSet, SampleStats,
};
use dpi::diffcore::Tensor;
use dpi::flow::{load_checkpoint, save_checkpoint, FlowConfig, FlowModel};
use dpi::forward::{
    asymmetric_ring, chi2_mri, chi2_vis, closure_geometry, closure_set, crescent, gaussian_blob, knee_phantom,
    mri_forward, simulate_mri, simulate_visibilities, synthesize_coverage, variable_density_masks, ClosureLikelihood,
    DftMatrix, ImageGrid, KSpaceData, MaskDensity, MriLikelihood, StationGains, ToyPotential, VisLikelihood,
    VisibilitySet,
};
use dpi::priors::{build_power_spectrum_cov, GaussianPrior, PriorKind, PriorSpec, SmoothKind};
use dpi::trainer::{train_with, Likelihood, Objective, TrainConfig};
use nalgebra::{DMatrix, DVector};

use crate::config::{Mode, RunConfig, TruthConfig};
use crate::io::{self, fmt_f64};
use crate::manifest::RunContext;
use crate::{other, CliError, Command};

/// Runs `cmd` under the output-directory lock and writes its manifest,
/// also when the command fails part-way.
pub fn execute(cmd: &Command, cfg: RunConfig) -> Result<(), CliError> {
    let mut ctx = RunContext::open(cfg, cmd.name())?;
    let result = match cmd {
        Command::Simulate => simulate(&mut ctx),
        Command::Train => train_cmd(&mut ctx),
        Command::Sample => sample_cmd(&mut ctx),
        Command::Stats { chi2: Some(img) } => chi2_cmd(&mut ctx, img),
        Command::Stats { chi2: None } => stats_cmd(&mut ctx),
        Command::Oracle => oracle_cmd(&mut ctx),
        Command::ToySweep => toy_sweep(&mut ctx),
        Command::Mri => mri_cmd(&mut ctx),
    };
    let status = match &result {
        Ok(()) => "ok".to_string(),
        Err(e) => format!("error: {e}"),
    };
    let manifest = ctx.finish(&status);
    result?;
    manifest.map(|_| ())
}

/// File-name tag for an acceleration factor, e.g. `3.5x`.
pub fn acc_tag(acc: f64) -> String {
    format!("{acc}x")
}

fn image_grid(cfg: &RunConfig) -> Result<ImageGrid, CliError> {
    let g = match cfg.mode {
        Mode::Mri => ImageGrid::new(cfg.grid.m, 1.0),
        _ => ImageGrid::from_uas(cfg.grid.m, cfg.grid.fov_uas),
    };
    g.map_err(|e| CliError::Config(e.to_string()))
}

fn truth_image(cfg: &RunConfig, grid: &ImageGrid) -> Result<Vec<f64>, CliError> {
    let flux = cfg.simulate.flux;
    let img = match &cfg.simulate.truth {
        TruthConfig::Crescent => crescent(grid, flux),
        TruthConfig::Ring {
            radius,
            width,
            asymmetry,
            angle,
        } => asymmetric_ring(grid, flux, *radius, *width, *asymmetry, *angle),
        TruthConfig::Blob { sigma, center } => gaussian_blob(grid, flux, *sigma, *center),
        TruthConfig::Knee => knee_phantom(grid.m),
        TruthConfig::File { path } => {
            let (m, img) = io::read_image(path)?;
            if m != grid.m {
                return Err(CliError::Config(format!("truth image is {m}×{m}, grid.m is {}", grid.m)));
            }
            img
        }
    };
    Ok(img)
}

fn write_image_files(ctx: &mut RunContext, stem: &Path, m: usize, img: &[f64]) -> Result<(), CliError> {
    let csv = stem.with_extension("csv");
    let pgm = stem.with_extension("pgm");
    io::write_image(&csv, m, img)?;
    io::write_pgm16(&pgm, m, img)?;
    ctx.record(csv);
    ctx.record(pgm);
    Ok(())
}

fn save_model(ctx: &mut RunContext, path: &Path, model: &FlowModel) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| other(format!("{}: {e}", dir.display())))?;
    }
    let (a, b) = save_checkpoint(model, path).map_err(other)?;
    ctx.record(a);
    ctx.record(b);
    Ok(())
}

fn load_model(path: &Path) -> Result<FlowModel, CliError> {
    load_checkpoint(path).map_err(|e| other(format!("{}: {e}", path.display())))
}

fn build_model(cfg: &RunConfig) -> Result<FlowModel, CliError> {
    let mut fc = FlowConfig::new(cfg.dim(), cfg.model.layers, cfg.model.output_map()?, cfg.model.seed);
    if let Some(w) = cfg.model.width {
        fc = fc.with_width(w);
    }
    FlowModel::new(fc).map_err(|e| CliError::Config(format!("model: {e}")))
}

fn flat_image(cfg: &RunConfig) -> Vec<f64> {
    let d = cfg.dim();
    vec![cfg.simulate.flux / d as f64; d]
}

fn read_prior_image(cfg: &RunConfig, path: &Option<PathBuf>) -> Result<Vec<f64>, CliError> {
    match path {
        None => Ok(flat_image(cfg)),
        Some(p) => {
            let (m, img) = io::read_image(p)?;
            if m != cfg.grid.m {
                return Err(CliError::Config(format!("{}: image is {m}×{m}, grid.m is {}", p.display(), cfg.grid.m)));
            }
            Ok(img)
        }
    }
}

/// Gaussian prior mean and covariance (before the term weight).
fn gaussian_prior_parts(cfg: &RunConfig) -> Result<Option<(Vec<f64>, DMatrix<f64>, f64)>, CliError> {
    let Some(g) = &cfg.prior.gaussian else { return Ok(None) };
    let s = &g.spectrum;
    let cov = build_power_spectrum_cov(cfg.grid.m, s.kappa, s.floor, s.variance)
        .map_err(|e| CliError::Config(format!("prior.gaussian: {e}")))?
        .dense();
    Ok(Some((read_prior_image(cfg, &g.mean)?, cov, g.weight)))
}

fn build_prior(cfg: &RunConfig) -> Result<Option<PriorSpec>, CliError> {
    let bad = |e: dpi::priors::PriorError| CliError::Config(format!("prior: {e}"));
    let p = &cfg.prior;
    let mut spec = PriorSpec::new(cfg.grid.m);
    let mut any = false;
    if let Some((mean, cov, weight)) = gaussian_prior_parts(cfg)? {
        let g = GaussianPrior::new(mean, cov).map_err(bad)?;
        spec = spec.with_term(weight, PriorKind::Gaussian(Arc::new(g))).map_err(bad)?;
        any = true;
    }
    for (w, kind) in [(p.tv, SmoothKind::tv()), (p.tsv, SmoothKind::Tsv), (p.l1, SmoothKind::L1)] {
        if let Some(w) = w {
            spec = spec.with_term(w, PriorKind::Smooth(kind)).map_err(bad)?;
            any = true;
        }
    }
    if let Some(mem) = &p.mem {
        let kind = SmoothKind::mem(read_prior_image(cfg, &mem.image)?).map_err(bad)?;
        spec = spec.with_term(mem.weight, PriorKind::Smooth(kind)).map_err(bad)?;
        any = true;
    }
    Ok(any.then_some(spec))
}

fn read_vis_data(cfg: &RunConfig) -> Result<VisibilitySet, CliError> {
    Ok(io::read_vis(&cfg.data_path(&cfg.data.vis, "vis.csv"))?)
}

fn closure_likelihood(cfg: &RunConfig, grid: &ImageGrid) -> Result<ClosureLikelihood, CliError> {
    let cov = io::read_coverage(&cfg.data_path(&cfg.data.coverage, "coverage.csv"))?;
    let set = io::read_closures(
        &cfg.data_path(&cfg.data.closure_phases, "closure_phases.csv"),
        &cfg.data_path(&cfg.data.log_closure_amps, "log_closure_amps.csv"),
    )?;
    let f = DftMatrix::from_coverage(grid, &cov);
    ClosureLikelihood::new(set, &cov, f).map_err(other)
}

/// k-space data from `data.mask`/`data.kspace`, defaulting to the files of
/// the first configured acceleration.
fn read_kspace_data(cfg: &RunConfig) -> Result<KSpaceData, CliError> {
    let tag = acc_tag(cfg.mri.accelerations[0]);
    let mask = io::read_mask(&cfg.data_path(&cfg.data.mask, &format!("mask_{tag}.csv")))?;
    Ok(io::read_kspace(&cfg.data_path(&cfg.data.kspace, &format!("kspace_{tag}.csv")), &mask)?)
}

fn build_objective(cfg: &RunConfig) -> Result<Objective, CliError> {
    if cfg.mode == Mode::Toy {
        return Ok(Objective::toy(cfg.toy.potential.build()?));
    }
    let grid = image_grid(cfg)?;
    let lik = match cfg.mode {
        Mode::Vis => {
            let y = read_vis_data(cfg)?;
            let f = DftMatrix::from_coverage(&grid, &y.coverage);
            Likelihood::Visibility(Arc::new(VisLikelihood::new(&y, f).map_err(other)?))
        }
        // ½χ², the Gaussian negative log-likelihood of the closure data
        Mode::Closure => Likelihood::Closure(Arc::new(closure_likelihood(cfg, &grid)?.with_weight(0.5))),
        Mode::Mri => Likelihood::Mri(Arc::new(MriLikelihood::new(read_kspace_data(cfg)?).map_err(other)?)),
        Mode::Toy => unreachable!(),
    };
    Ok(Objective::new(lik, build_prior(cfg)?))
}

/// Trains into `dir` (loss.csv, model.ckpt, checkpoints/). On a numerical
/// abort the last finite model is still saved before the error is returned.
fn run_training(
    ctx: &mut RunContext,
    objective: &Objective,
    tc: &TrainConfig,
    model: FlowModel,
    dir: &Path,
) -> Result<FlowModel, CliError> {
    let ckpt_dir = dir.join("checkpoints");
    let mut saved: Vec<PathBuf> = Vec::new();
    let outcome = train_with(model, objective, tc, |step, m| {
        std::fs::create_dir_all(&ckpt_dir).map_err(|e| e.to_string())?;
        let (a, b) = save_checkpoint(m, &ckpt_dir.join(format!("step_{step:06}.ckpt"))).map_err(|e| e.to_string())?;
        saved.extend([a, b]);
        Ok(())
    })
    .map_err(|e| match e {
        dpi::trainer::TrainError::InvalidConfig(m) => CliError::Config(m),
        dpi::trainer::TrainError::Dimension { expected, got } => {
            CliError::Config(format!("data dimension {got} does not match the model ({expected})"))
        }
        other => CliError::Other(other.to_string()),
    })?;
    for p in saved {
        ctx.record(p);
    }
    let loss = dir.join("loss.csv");
    io::write_loss_history(&loss, &outcome.history)?;
    ctx.record(loss);
    save_model(ctx, &dir.join("model.ckpt"), &outcome.model)?;
    if let Some(abort) = outcome.abort {
        return Err(CliError::Numerical(format!(
            "training stopped at step {}: {} (last finite model saved)",
            abort.step, abort.error
        )));
    }
    if let Some(last) = outcome.history.last() {
        eprintln!(
            "trained {} steps: loss {:.6e} (data {:.6e}, prior {:.6e}, -logdet {:.6e})",
            outcome.history.len(),
            last.total,
            last.data_fit,
            last.prior,
            last.neg_logdet
        );
    }
    Ok(outcome.model)
}

fn note_train_seeds(ctx: &mut RunContext) {
    let (m, t) = (ctx.cfg.model.seed, ctx.cfg.train.seed);
    ctx.seed("model", m);
    ctx.seed("train", t);
}

fn simulate(ctx: &mut RunContext) -> Result<(), CliError> {
    let cfg = ctx.cfg.clone();
    let data = ctx.out().join("data");
    match cfg.mode {
        Mode::Toy => simulate_toy(ctx, &cfg, &data),
        Mode::Vis | Mode::Closure => simulate_radio(ctx, &cfg, &data),
        Mode::Mri => simulate_mri_data(ctx, &cfg, &data).map(|_| ()),
    }
}

/// Normalized target density on a square grid over the quadrature box:
/// row `r` is `x₂ = lo + r·h`, column `c` is `x₁ = lo + c·h`.
fn simulate_toy(ctx: &mut RunContext, cfg: &RunConfig, data: &Path) -> Result<(), CliError> {
    const N: usize = 256;
    let pot = cfg.toy.potential.build()?;
    let half = cfg.toy.box_half;
    let log_z = grid_log_partition(&pot, &GridBox::square(half), cfg.toy.resolution).map_err(other)?;
    let h = 2.0 * half / (N - 1) as f64;
    let img: Vec<f64> = (0..N * N)
        .map(|i| {
            let x = [-half + (i % N) as f64 * h, -half + (i / N) as f64 * h];
            (-pot.value(x) - log_z).exp()
        })
        .collect();
    write_image_files(ctx, &data.join("density"), N, &img)
}

fn simulate_radio(ctx: &mut RunContext, cfg: &RunConfig, data: &Path) -> Result<(), CliError> {
    let grid = image_grid(cfg)?;
    let truth = truth_image(cfg, &grid)?;
    let cov = synthesize_coverage(&cfg.simulate.array.spec()).map_err(|e| CliError::Config(format!("array: {e}")))?;
    let f = DftMatrix::from_coverage(&grid, &cov);
    let gains = match &cfg.simulate.gains {
        Some(g) => {
            ctx.seed("gains", g.seed);
            StationGains::random(&cov, (g.min, g.max), g.seed)
        }
        None => StationGains::default(),
    };
    if let Some(s) = cfg.simulate.noise_seed {
        ctx.seed("noise", s);
    }
    let y = simulate_visibilities(&truth, &f, &cov, &gains, cfg.simulate.noise_seed).map_err(other)?;
    write_image_files(ctx, &data.join("truth"), grid.m, &truth)?;
    let p = data.join("coverage.csv");
    io::write_coverage(&p, &cov)?;
    ctx.record(p);
    let p = data.join("vis.csv");
    io::write_vis(&p, &y)?;
    ctx.record(p);
    if cfg.mode == Mode::Closure {
        let set = closure_set(&y, &closure_geometry(&cov)).map_err(other)?;
        let p = data.join("closure_phases.csv");
        io::write_closure_phases(&p, &set)?;
        ctx.record(p);
        let p = data.join("log_closure_amps.csv");
        io::write_log_closure_amps(&p, &set)?;
        ctx.record(p);
        eprintln!(
            "simulated {} visibilities, {} closure phases, {} log closure amplitudes",
            y.vis.len(),
            set.phases.len(),
            set.log_amps.len()
        );
    } else {
        eprintln!("simulated {} visibilities", y.vis.len());
    }
    Ok(())
}

/// Truth, nested masks and k-space data for every configured acceleration.
fn simulate_mri_data(ctx: &mut RunContext, cfg: &RunConfig, data: &Path) -> Result<(Vec<f64>, Vec<KSpaceData>), CliError> {
    let grid = image_grid(cfg)?;
    let truth = truth_image(cfg, &grid)?;
    let mc = &cfg.mri;
    let density = MaskDensity {
        power: mc.density_power,
        floor: mc.density_floor,
        center_radius: mc.center_radius,
    };
    ctx.seed("mask", mc.mask_seed);
    let masks = variable_density_masks(grid.m, &mc.accelerations, density, mc.mask_seed)
        .map_err(|e| CliError::Config(format!("mri: {e}")))?;
    write_image_files(ctx, &data.join("truth"), grid.m, &truth)?;
    let mut out = Vec::with_capacity(masks.len());
    for (mask, &acc) in masks.iter().zip(&mc.accelerations) {
        let k = match cfg.simulate.noise_seed {
            Some(seed) => simulate_mri(&truth, mask, mc.noise_fraction, seed).map_err(other)?,
            None => KSpaceData {
                mask: mask.clone(),
                values: mri_forward(&truth, mask).map_err(other)?,
                sigma: mc.noise_fraction * truth.iter().sum::<f64>().abs(),
            },
        };
        let tag = acc_tag(acc);
        let p = data.join(format!("mask_{tag}.csv"));
        io::write_mask(&p, mask)?;
        ctx.record(p);
        let p = data.join(format!("kspace_{tag}.csv"));
        io::write_kspace(&p, &k)?;
        ctx.record(p);
        out.push(k);
    }
    if let Some(s) = cfg.simulate.noise_seed {
        ctx.seed("noise", s);
    }
    Ok((truth, out))
}

fn train_cmd(ctx: &mut RunContext) -> Result<(), CliError> {
    let cfg = ctx.cfg.clone();
    let objective = build_objective(&cfg)?;
    let tc = cfg.train.build()?;
    note_train_seeds(ctx);
    let dir = ctx.out().join("train");
    run_training(ctx, &objective, &tc, build_model(&cfg)?, &dir)?;
    Ok(())
}

fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.data.model.clone().unwrap_or_else(|| cfg.output_dir.join("train").join("model.ckpt"))
}

fn samples_path(cfg: &RunConfig) -> PathBuf {
    cfg.data.samples.clone().unwrap_or_else(|| cfg.output_dir.join("samples.csv"))
}

fn sample_cmd(ctx: &mut RunContext) -> Result<(), CliError> {
    let path = model_path(&ctx.cfg);
    let model = load_model(&path)?;
    let (n, seed) = (ctx.cfg.sample.n, ctx.cfg.sample.seed);
    ctx.seed("sample", seed);
    let set = PosteriorSampleSet::draw(&model, n, seed, &path.to_string_lossy()).map_err(|e| CliError::Numerical(e.to_string()))?;
    let out = samples_path(&ctx.cfg);
    io::write_samples(&out, &set)?;
    ctx.record(out);
    if model.dim() == ctx.cfg.grid.m * ctx.cfg.grid.m && ctx.cfg.mode != Mode::Toy {
        let m = ctx.cfg.grid.m;
        for i in 0..n.min(4) {
            let stem = ctx.out().join("sample_images").join(format!("sample_{i}"));
            write_image_files(ctx, &stem, m, set.samples.row(i))?;
        }
    }
    Ok(())
}

fn truth_path(cfg: &RunConfig) -> PathBuf {
    cfg.data_path(&cfg.data.truth, "truth.csv")
}

fn read_truth(cfg: &RunConfig) -> Result<Option<Vec<f64>>, CliError> {
    let p = truth_path(cfg);
    if !p.exists() {
        return Ok(None);
    }
    let (m, img) = io::read_image(&p)?;
    if m != cfg.grid.m {
        return Err(CliError::Config(format!("{}: image is {m}×{m}, grid.m is {}", p.display(), cfg.grid.m)));
    }
    Ok(Some(img))
}

fn write_kv(ctx: &mut RunContext, path: PathBuf, rows: &[(&str, f64)]) -> Result<(), CliError> {
    io::write_table(
        &path,
        &["quantity", "value"],
        rows.iter().map(|(k, v)| vec![k.to_string(), fmt_f64(*v)]),
    )?;
    for (k, v) in rows {
        println!("{k} = {v:.6e}");
    }
    ctx.record(path);
    Ok(())
}

fn chi2_cmd(ctx: &mut RunContext, img_path: &Path) -> Result<(), CliError> {
    let cfg = ctx.cfg.clone();
    let (m, x) = io::read_image(img_path)?;
    if cfg.mode == Mode::Toy {
        return Err(CliError::Usage("--chi2 needs an imaging mode".into()));
    }
    if m != cfg.grid.m {
        return Err(CliError::Config(format!("image is {m}×{m}, grid.m is {}", cfg.grid.m)));
    }
    let grid = image_grid(&cfg)?;
    let path = ctx.out().join("stats").join("chi2.csv");
    match cfg.mode {
        Mode::Vis => {
            let y = read_vis_data(&cfg)?;
            let f = DftMatrix::from_coverage(&grid, &y.coverage);
            let chi2 = 2.0 * chi2_vis(&x, &y, &f).map_err(other)?;
            let n = 2.0 * y.vis.len() as f64;
            write_kv(ctx, path, &[("chi2", chi2), ("n_terms", n), ("reduced_chi2", chi2 / n)])
        }
        Mode::Closure => {
            let c = closure_likelihood(&cfg, &grid)?.chi2(&x).map_err(other)?;
            write_kv(
                ctx,
                path,
                &[
                    ("chi2_phase", c.phase_sum),
                    ("n_phase", c.n_phase as f64),
                    ("reduced_chi2_phase", c.reduced_phase()),
                    ("chi2_log_amp", c.amp_sum),
                    ("n_log_amp", c.n_amp as f64),
                    ("reduced_chi2_log_amp", c.reduced_amp()),
                ],
            )
        }
        Mode::Mri => {
            let k = read_kspace_data(&cfg)?;
            let chi2 = 2.0 * chi2_mri(&x, &k).map_err(other)?;
            let n = 2.0 * k.values.len() as f64;
            write_kv(ctx, path, &[("chi2", chi2), ("n_terms", n), ("reduced_chi2", chi2 / n)])
        }
        Mode::Toy => unreachable!(),
    }
}

fn read_sample_file(cfg: &RunConfig) -> Result<Tensor, CliError> {
    let (x, _) = io::read_samples(&samples_path(cfg))?;
    if x.cols() != cfg.dim() {
        return Err(CliError::Config(format!("samples have {} columns, config dimension is {}", x.cols(), cfg.dim())));
    }
    Ok(x)
}

fn write_matrix(ctx: &mut RunContext, path: PathBuf, m: &DMatrix<f64>) -> Result<(), CliError> {
    let mut text = String::with_capacity(m.nrows() * m.ncols() * 24);
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| fmt_f64(m[(r, c)])).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    io::write_text(&path, &text)?;
    ctx.record(path);
    Ok(())
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn coverage_rows(st: &SampleStats, truth: &[f64]) -> Result<Vec<Vec<String>>, CliError> {
    [1.0, 2.0, 3.0, 4.0]
        .iter()
        .map(|&k| {
            let f = coverage_fraction(&st.mean, &st.std, truth, k).map_err(other)?;
            Ok(vec![fmt_f64(k), fmt_f64(f)])
        })
        .collect()
}

fn stats_cmd(ctx: &mut RunContext) -> Result<(), CliError> {
    let cfg = ctx.cfg.clone();
    let raw = read_sample_file(&cfg)?;
    let dir = ctx.out().join("stats");
    let m = cfg.grid.m;
    let imaging = cfg.mode != Mode::Toy;
    let flux = cfg.analysis.flux.unwrap_or(cfg.simulate.flux);
    let x = if cfg.analysis.align && imaging {
        align_normalize(&raw, m, &AlignReference::Mean, flux).map_err(other)?
    } else {
        raw.clone()
    };
    let st = sample_stats(&x).map_err(other)?;
    if imaging {
        write_image_files(ctx, &dir.join("mean"), m, &st.mean)?;
        write_image_files(ctx, &dir.join("std"), m, &st.std)?;
    } else {
        let p = dir.join("summary.csv");
        io::write_table(
            &p,
            &["coord", "mean", "std"],
            (0..st.mean.len()).map(|i| vec![i.to_string(), fmt_f64(st.mean[i]), fmt_f64(st.std[i])]),
        )?;
        ctx.record(p);
    }
    if cfg.analysis.covariance {
        write_matrix(ctx, dir.join("cov.csv"), &st.cov)?;
    }

    let mut labels = vec![0usize; x.rows()];
    if cfg.analysis.modes > 0 && imaging {
        ctx.seed("analysis", cfg.analysis.seed);
        let grid = image_grid(&cfg)?;
        let lik = match cfg.mode {
            Mode::Closure => Some(closure_likelihood(&cfg, &grid)?),
            _ => None,
        };
        let report = cluster_modes_scored(&x, cfg.analysis.modes, cfg.analysis.seed, lik.as_ref().map(|l| (l, &raw)))
            .map_err(|e| CliError::Usage(e.to_string()))?;
        labels = report.labels.clone();
        let truth = read_truth(&cfg)?;
        let mut summary = Vec::new();
        for (i, mode) in report.modes.iter().enumerate() {
            let mdir = dir.join("modes").join(format!("mode_{i}"));
            write_image_files(ctx, &mdir.join("mean"), m, &mode.mean)?;
            write_image_files(ctx, &mdir.join("std"), m, &mode.std)?;
            write_image_files(ctx, &mdir.join("frac_std"), m, &mode.frac_std)?;
            if !mode.chi2.is_empty() {
                let p = mdir.join("chi2.csv");
                io::write_table(
                    &p,
                    &["sample", "reduced_chi2_phase", "reduced_chi2_log_amp"],
                    mode.members
                        .iter()
                        .zip(&mode.chi2)
                        .map(|(s, c)| vec![s.to_string(), fmt_f64(c.0), fmt_f64(c.1)]),
                )?;
                ctx.record(p);
                for (name, h) in [("phase_hist.csv", &mode.phase_hist), ("amp_hist.csv", &mode.amp_hist)] {
                    if let Some(h) = h {
                        let p = mdir.join(name);
                        io::write_table(
                            &p,
                            &["lo", "hi", "count"],
                            h.counts
                                .iter()
                                .enumerate()
                                .map(|(b, c)| vec![fmt_f64(h.edges[b]), fmt_f64(h.edges[b + 1]), c.to_string()]),
                        )?;
                        ctx.record(p);
                    }
                }
            }
            let (mp, ma) = mode.median_chi2().unwrap_or((f64::NAN, f64::NAN));
            let dist = match &truth {
                Some(t) => truth_distance(t, &mode.mean, m, flux)?,
                None => f64::NAN,
            };
            summary.push(vec![
                i.to_string(),
                mode.members.len().to_string(),
                fmt_f64(mp),
                fmt_f64(ma),
                fmt_f64(dist),
            ]);
        }
        let p = dir.join("modes").join("summary.csv");
        io::write_table(
            &p,
            &["mode", "members", "median_chi2_phase", "median_chi2_log_amp", "truth_rmse"],
            summary,
        )?;
        ctx.record(p);
    }

    let dims = cfg.analysis.embed_dims;
    if dims > 0 && x.rows() > dims && dims <= x.cols() {
        let emb = pca_embed(&x, dims).map_err(other)?;
        let header: Vec<String> = (1..=dims).map(|i| format!("pc{i}")).chain(["mode".to_string()]).collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let p = dir.join("embedding.csv");
        io::write_table(
            &p,
            &header,
            (0..x.rows()).map(|i| {
                emb.point(i)
                    .iter()
                    .map(|v| fmt_f64(*v))
                    .chain([labels[i].to_string()])
                    .collect()
            }),
        )?;
        ctx.record(p);
    }

    if imaging {
        if let Some(truth) = read_truth(&cfg)? {
            let truth = if cfg.analysis.align {
                let t = Tensor::matrix(1, truth.len(), truth).map_err(other)?;
                align_normalize(&t, m, &AlignReference::Image(st.mean.clone()), flux)
                    .map_err(other)?
                    .row(0)
                    .to_vec()
            } else {
                truth
            };
            let p = dir.join("coverage.csv");
            io::write_table(&p, &["k", "fraction"], coverage_rows(&st, &truth)?)?;
            ctx.record(p);
            let range = truth.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - truth.iter().cloned().fold(f64::INFINITY, f64::min);
            let e = rmse(&st.mean, &truth);
            let avg_std = st.std.iter().sum::<f64>() / st.std.len() as f64;
            write_kv(
                ctx,
                dir.join("summary.csv"),
                &[("rmse", e), ("rmse_over_range", e / range), ("mean_std", avg_std)],
            )?;
        }
    }
    Ok(())
}

/// RMSE between `mean` and the truth after flux normalization and the best
/// circular shift onto `mean`.
fn truth_distance(truth: &[f64], mean: &[f64], m: usize, flux: f64) -> Result<f64, CliError> {
    let t = Tensor::matrix(1, truth.len(), truth.to_vec()).map_err(other)?;
    let a = align_normalize(&t, m, &AlignReference::Image(mean.to_vec()), flux).map_err(other)?;
    Ok(rmse(a.row(0), mean))
}

fn log_partition(cfg: &RunConfig, pot: &ToyPotential) -> Result<f64, CliError> {
    grid_log_partition(pot, &GridBox::square(cfg.toy.box_half), cfg.toy.resolution)
        .map_err(|e| CliError::Config(format!("toy: {e}")))
}

/// KL(q ‖ p) with `p` normalized by quadrature, plus the mean of `log q`.
fn toy_kl(cfg: &RunConfig, model: &FlowModel, pot: &ToyPotential, log_z: f64) -> Result<(dpi::analysis::KlEstimate, f64), CliError> {
    let (n, seed) = (cfg.toy.kl_samples, cfg.toy.kl_seed);
    let kl = kl_monte_carlo(model, |x| -pot.value([x[0], x[1]]) - log_z, n, seed)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let set = PosteriorSampleSet::draw(model, n, seed, "").map_err(|e| CliError::Numerical(e.to_string()))?;
    let mean_log_q = set.log_q.iter().sum::<f64>() / n as f64;
    Ok((kl, mean_log_q))
}

fn oracle_cmd(ctx: &mut RunContext) -> Result<(), CliError> {
    let cfg = ctx.cfg.clone();
    let dir = ctx.out().join("oracle");
    match cfg.mode {
        Mode::Toy => {
            let pot = cfg.toy.potential.build()?;
            let log_z = log_partition(&cfg, &pot)?;
            let model = load_model(&model_path(&cfg))?;
            ctx.seed("kl", cfg.toy.kl_seed);
            let (kl, mlq) = toy_kl(&cfg, &model, &pot, log_z)?;
            write_kv(
                ctx,
                dir.join("kl.csv"),
                &[
                    ("kl", kl.value),
                    ("std_err", kl.std_err),
                    ("n", kl.n as f64),
                    ("log_z", log_z),
                    ("mean_log_q", mlq),
                ],
            )
        }
        Mode::Vis => vis_oracle(ctx, &cfg, &dir),
        _ => Err(CliError::Config(
            "oracle needs the toy mode or a visibility problem with a Gaussian prior".into(),
        )),
    }
}

fn vis_oracle(ctx: &mut RunContext, cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    let p = &cfg.prior;
    if p.tv.is_some() || p.tsv.is_some() || p.l1.is_some() || p.mem.is_some() {
        return Err(CliError::Config("the analytic posterior needs a Gaussian prior alone".into()));
    }
    let Some((mean, lam, weight)) = gaussian_prior_parts(cfg)? else {
        return Err(CliError::Config("the analytic posterior needs prior.gaussian".into()));
    };
    if !(weight > 0.0) {
        return Err(CliError::Config("prior.gaussian.weight must be positive".into()));
    }
    let grid = image_grid(cfg)?;
    let y = read_vis_data(cfg)?;
    let f = DftMatrix::from_coverage(&grid, &y.coverage);
    let (k, d) = (f.n_vis(), f.n_pixels());
    // real and imaginary parts stacked as 2K independent measurements
    let fr = DMatrix::from_fn(2 * k, d, |r, c| {
        if r < k {
            f.real_part()[r * d + c]
        } else {
            f.imag_part()[(r - k) * d + c]
        }
    });
    let yv = DVector::from_fn(2 * k, |r, _| if r < k { y.vis[r].re } else { y.vis[r - k].im });
    let sig = y.coverage.sigmas();
    let sigma = DMatrix::from_diagonal(&DVector::from_fn(2 * k, |r, _| sig[r % k].powi(2)));
    // weight w on ½(x−μ)ᵀΛ⁻¹(x−μ) is a prior covariance Λ/w
    let lam = lam / weight;
    let post = analytic_posterior(&fr, &sigma, &DVector::from_vec(mean), &lam, &yv).map_err(|e| CliError::Numerical(e.to_string()))?;
    let m = grid.m;
    let pmean: Vec<f64> = post.mean.iter().cloned().collect();
    let pstd: Vec<f64> = (0..d).map(|i| post.cov[(i, i)].max(0.0).sqrt()).collect();
    write_image_files(ctx, &dir.join("mean"), m, &pmean)?;
    write_image_files(ctx, &dir.join("std"), m, &pstd)?;

    let sp = samples_path(cfg);
    if !sp.exists() {
        return Ok(());
    }
    let x = read_sample_file(cfg)?;
    let st = sample_stats(&x).map_err(other)?;
    let mut rel: Vec<f64> = st.std.iter().zip(&pstd).map(|(s, p)| (s - p).abs() / p).collect();
    rel.sort_by(f64::total_cmp);
    let median_rel = if d % 2 == 1 {
        rel[d / 2]
    } else {
        0.5 * (rel[d / 2 - 1] + rel[d / 2])
    };
    let kl = gaussian_kl(&DVector::from_vec(st.mean.clone()), &st.cov, &post.mean, &post.cov)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let e = rmse(&st.mean, &pmean);
    let mut rows = vec![
        ("mean_rmse", e),
        ("median_std_rel_err", median_rel),
        ("gaussian_fit_kl", kl),
    ];
    if let Some(truth) = read_truth(cfg)? {
        let range = truth.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - truth.iter().cloned().fold(f64::INFINITY, f64::min);
        rows.push(("mean_rmse_over_truth_range", e / range));
    }
    write_kv(ctx, dir.join("comparison.csv"), &rows)
}

fn toy_sweep(ctx: &mut RunContext) -> Result<(), CliError> {
    let cfg = ctx.cfg.clone();
    if cfg.mode != Mode::Toy {
        return Err(CliError::Config("toy-sweep needs mode \"toy\"".into()));
    }
    let pot = cfg.toy.potential.build()?;
    let log_z = log_partition(&cfg, &pot)?;
    note_train_seeds(ctx);
    ctx.seed("kl", cfg.toy.kl_seed);
    let objective = Objective::toy(pot.clone());
    let dir = ctx.out().join("toy_sweep");
    let mut rows = Vec::new();
    for &beta in &cfg.toy.betas {
        let mut tc = cfg.train.build()?;
        tc.beta = beta;
        let model = run_training(ctx, &objective, &tc, build_model(&cfg)?, &dir.join(format!("beta_{beta}")))?;
        let (kl, mlq) = toy_kl(&cfg, &model, &pot, log_z)?;
        eprintln!("beta {beta}: KL {:.4} ± {:.4}, mean log q {:.4}", kl.value, kl.std_err, mlq);
        rows.push(vec![fmt_f64(beta), fmt_f64(kl.value), fmt_f64(kl.std_err), fmt_f64(mlq)]);
    }
    let p = dir.join("kl_vs_beta.csv");
    io::write_table(&p, &["beta", "kl", "std_err", "mean_log_q"], rows)?;
    ctx.record(p);
    Ok(())
}

fn mri_cmd(ctx: &mut RunContext) -> Result<(), CliError> {
    let cfg = ctx.cfg.clone();
    if cfg.mode != Mode::Mri {
        return Err(CliError::Config("the mri command needs mode \"mri\"".into()));
    }
    let (truth, data) = simulate_mri_data(ctx, &cfg, &ctx.out().join("data"))?;
    let prior = build_prior(&cfg)?;
    let tc = cfg.train.build()?;
    note_train_seeds(ctx);
    ctx.seed("sample", cfg.sample.seed);
    let m = cfg.grid.m;
    let mut rows = Vec::new();
    for (k, &acc) in data.into_iter().zip(&cfg.mri.accelerations) {
        let tag = acc_tag(acc);
        let dir = ctx.out().join("mri").join(&tag);
        let sampled = k.mask.count();
        let objective = Objective::new(
            Likelihood::Mri(Arc::new(MriLikelihood::new(k).map_err(other)?)),
            prior.clone(),
        );
        let model = run_training(ctx, &objective, &tc, build_model(&cfg)?, &dir)?;
        let set = PosteriorSampleSet::draw(&model, cfg.sample.n, cfg.sample.seed, &tag)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let st = sample_stats(&set.samples).map_err(other)?;
        write_image_files(ctx, &dir.join("mean"), m, &st.mean)?;
        write_image_files(ctx, &dir.join("std"), m, &st.std)?;
        let cov = coverage_fraction(&st.mean, &st.std, &truth, cfg.mri.coverage_k).map_err(other)?;
        let avg_std = st.std.iter().sum::<f64>() / st.std.len() as f64;
        let e = rmse(&st.mean, &truth);
        eprintln!("{tag}: {sampled} samples, mean std {avg_std:.4e}, coverage {cov:.4}, rmse {e:.4e}");
        rows.push(vec![
            fmt_f64(acc),
            sampled.to_string(),
            fmt_f64(avg_std),
            fmt_f64(cov),
            fmt_f64(e),
        ]);
    }
    let p = ctx.out().join("mri").join("mri_report.csv");
    io::write_table(&p, &["acceleration", "sampled", "mean_std", "coverage", "rmse"], rows)?;
    ctx.record(p);
    Ok(())
}
