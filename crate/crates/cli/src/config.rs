//! JSON run configuration.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Unknown fields are rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use dpi::flow::OutputMap;
use dpi::forward::ToyPotential;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Toy,
    Vis,
    Closure,
    Mri,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Toy => "toy",
            Mode::Vis => "vis",
            Mode::Closure => "closure",
            Mode::Mri => "mri",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub toy: ToyConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sample: SampleConfig,
    #[serde(default)]
    pub mri: MriConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub m: usize,
    /// Field of view in micro-arcseconds (ignored for MRI).
    pub fov_uas: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { m: 16, fov_uas: 160.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    /// Conditioner width; `max(D, 64)` when absent.
    pub width: Option<usize>,
    /// `"none"` or `"softplus"`.
    pub output_map: String,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 32,
            width: None,
            output_map: "none".into(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn output_map(&self) -> Result<OutputMap, CliError> {
        OutputMap::parse(&self.output_map)
            .ok_or_else(|| CliError::Config(format!("model.output_map: unknown map {:?}", self.output_map)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum PotentialConfig {
    /// Two equal-weight components at (−1, −0.5) and (1, 0.5), covariance 0.3·I.
    GaussianMixture {
        #[serde(default)]
        components: Option<Vec<ComponentConfig>>,
    },
    Bowtie,
    Sinusoidal {
        #[serde(default)]
        confine: Option<f64>,
    },
    Gaussian {
        #[serde(default = "one")]
        sigma: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub weight: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl PotentialConfig {
    pub fn build(&self) -> Result<ToyPotential, CliError> {
        let bad = |e: dpi::forward::ForwardError| CliError::Config(format!("toy.potential: {e}"));
        let p = match self {
            PotentialConfig::GaussianMixture { components: None } => ToyPotential::default_mixture(),
            PotentialConfig::GaussianMixture { components: Some(cs) } => {
                let cs = cs
                    .iter()
                    .map(|c| dpi::forward::GmmComponent::new(c.weight, c.mean, c.cov))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(bad)?;
                ToyPotential::gaussian_mixture(cs).map_err(bad)?
            }
            PotentialConfig::Bowtie => ToyPotential::bowtie(),
            PotentialConfig::Sinusoidal { confine } => match ToyPotential::sinusoidal() {
                ToyPotential::Sinusoidal { amplitude, period, width, .. } => ToyPotential::Sinusoidal {
                    amplitude,
                    period,
                    width,
                    confine: *confine,
                },
                other => other,
            },
            PotentialConfig::Gaussian { sigma } => ToyPotential::Gaussian { sigma: *sigma },
        };
        p.validate().map_err(bad)?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub potential: PotentialConfig,
    /// Quadrature box `[−h, h]²`.
    pub box_half: f64,
    pub resolution: usize,
    pub betas: Vec<f64>,
    /// Monte-Carlo samples for KL estimates.
    pub kl_samples: usize,
    pub kl_seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            potential: PotentialConfig::GaussianMixture { components: None },
            box_half: 8.0,
            resolution: 800,
            betas: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            kl_samples: 10_000,
            kl_seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum TruthConfig {
    Crescent,
    Ring {
        #[serde(default = "ring_radius")]
        radius: f64,
        #[serde(default = "ring_width")]
        width: f64,
        #[serde(default = "ring_asymmetry")]
        asymmetry: f64,
        #[serde(default = "ring_angle")]
        angle: f64,
    },
    Blob {
        sigma: f64,
        #[serde(default)]
        center: (f64, f64),
    },
    Knee,
    File {
        path: PathBuf,
    },
}

fn ring_radius() -> f64 {
    0.22
}
fn ring_width() -> f64 {
    0.05
}
fn ring_asymmetry() -> f64 {
    0.8
}
fn ring_angle() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayConfig {
    pub n_scans: usize,
    pub sigma_scale: f64,
    pub declination_deg: f64,
    pub duration_hours: f64,
    pub start_hour: f64,
    pub elevation_cut_deg: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        let d = dpi::forward::ArraySpec::default();
        Self {
            n_scans: d.n_scans,
            sigma_scale: d.sigma_scale,
            declination_deg: d.declination_deg,
            duration_hours: d.duration_hours,
            start_hour: d.start_hour,
            elevation_cut_deg: d.elevation_cut_deg,
        }
    }
}

impl ArrayConfig {
    pub fn spec(&self) -> dpi::forward::ArraySpec {
        dpi::forward::ArraySpec {
            n_scans: self.n_scans,
            sigma_scale: self.sigma_scale,
            declination_deg: self.declination_deg,
            duration_hours: self.duration_hours,
            start_hour: self.start_hour,
            elevation_cut_deg: self.elevation_cut_deg,
            ..dpi::forward::ArraySpec::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainConfig {
    pub min: f64,
    pub max: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub truth: TruthConfig,
    /// Total flux of generated truth images (not applied to `knee` or `file`).
    pub flux: f64,
    pub array: ArrayConfig,
    /// Noise seed; `null` simulates noiseless data.
    pub noise_seed: Option<u64>,
    /// Random station gains and phases; `null` means unit gains.
    pub gains: Option<GainConfig>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            truth: TruthConfig::Crescent,
            flux: 1.0,
            array: ArrayConfig::default(),
            noise_seed: Some(1),
            gains: None,
        }
    }
}

/// Input paths. Absent entries default to the files `simulate` writes
/// under `<output_dir>/data/`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub truth: Option<PathBuf>,
    pub coverage: Option<PathBuf>,
    pub vis: Option<PathBuf>,
    pub closure_phases: Option<PathBuf>,
    pub log_closure_amps: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub kspace: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub samples: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub kappa: f64,
    pub floor: f64,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianPriorConfig {
    #[serde(default = "one")]
    pub weight: f64,
    /// Mean image CSV; a flat image holding `simulate.flux` when absent.
    #[serde(default)]
    pub mean: Option<PathBuf>,
    pub spectrum: SpectrumConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemConfig {
    pub weight: f64,
    /// Reference image CSV; a flat image holding `simulate.flux` when absent.
    #[serde(default)]
    pub image: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub gaussian: Option<GaussianPriorConfig>,
    pub tv: Option<f64>,
    pub tsv: Option<f64>,
    pub l1: Option<f64>,
    pub mem: Option<MemConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealConfig {
    pub start: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: Option<f64>,
    /// Entropy weight β.
    pub beta: f64,
    pub seed: u64,
    /// Checkpoint cadence in steps; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub anneal: Option<AnnealConfig>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = dpi::trainer::TrainConfig::default();
        Self {
            batch: d.batch,
            epochs: d.epochs,
            lr: d.adam.lr,
            beta1: d.adam.beta1,
            beta2: d.adam.beta2,
            adam_eps: d.adam.eps,
            clip_norm: d.adam.clip_norm,
            beta: d.beta,
            seed: d.seed,
            checkpoint_every: d.checkpoint_every,
            anneal: None,
        }
    }
}

impl TrainSection {
    pub fn build(&self) -> Result<dpi::trainer::TrainConfig, CliError> {
        let cfg = dpi::trainer::TrainConfig {
            batch: self.batch,
            epochs: self.epochs,
            adam: dpi::trainer::AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
                clip_norm: self.clip_norm,
            },
            beta: self.beta,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            anneal: self.anneal.as_ref().map(|a| dpi::trainer::BetaAnneal {
                start: a.start,
                steps: a.steps,
            }),
        };
        cfg.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub n: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { n: 2048, seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MriConfig {
    pub accelerations: Vec<f64>,
    /// Noise std per real component as a fraction of |DC|.
    pub noise_fraction: f64,
    pub mask_seed: u64,
    pub density_power: f64,
    pub density_floor: f64,
    pub center_radius: f64,
    /// Coverage threshold in standard deviations.
    pub coverage_k: f64,
}

impl Default for MriConfig {
    fn default() -> Self {
        let d = dpi::forward::MaskDensity::default();
        Self {
            accelerations: vec![3.5, 5.5, 8.4],
            noise_fraction: 4e-4,
            mask_seed: 1,
            density_power: d.power,
            density_floor: d.floor,
            center_radius: d.center_radius,
            coverage_k: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Flux-normalize and shift-align samples before statistics.
    pub align: bool,
    /// Flux target for alignment; `simulate.flux` when absent.
    pub flux: Option<f64>,
    /// k-means cluster count; 0 skips mode analysis.
    pub modes: usize,
    pub seed: u64,
    pub embed_dims: usize,
    /// Write the full D×D sample covariance.
    pub covariance: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            align: false,
            flux: None,
            modes: 0,
            seed: 0,
            embed_dims: 2,
            covariance: true,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Loads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let TruthConfig::File { path } = &mut self.simulate.truth {
            fix(path);
        }
        let d = &mut self.data;
        for p in [
            &mut d.truth,
            &mut d.coverage,
            &mut d.vis,
            &mut d.closure_phases,
            &mut d.log_closure_amps,
            &mut d.mask,
            &mut d.kspace,
            &mut d.model,
            &mut d.samples,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if let Some(g) = &mut self.prior.gaussian {
            g.mean.as_mut().map(fix);
        }
        if let Some(m) = &mut self.prior.mem {
            m.image.as_mut().map(fix);
        }
    }

    /// Flow dimension: 2 for the toy, `M²` otherwise.
    pub fn dim(&self) -> usize {
        match self.mode {
            Mode::Toy => 2,
            _ => self.grid.m * self.grid.m,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.mode != Mode::Toy && self.grid.m < 2 {
            return bad(format!("grid.m = {} must be at least 2", self.grid.m));
        }
        if !(self.grid.fov_uas > 0.0) {
            return bad("grid.fov_uas must be positive".into());
        }
        if self.model.layers == 0 {
            return bad("model.layers must be positive".into());
        }
        self.model.output_map()?;
        self.train.build()?;
        if self.sample.n < 2 {
            return bad("sample.n must be at least 2".into());
        }
        if self.mode == Mode::Toy {
            self.toy.potential.build()?;
            if self.toy.betas.iter().any(|b| !(*b > 0.0)) || self.toy.betas.is_empty() {
                return bad("toy.betas must be a non-empty list of positive values".into());
            }
            if self.toy.resolution < 2 || !(self.toy.box_half > 0.0) || self.toy.kl_samples < 2 {
                return bad("toy: resolution ≥ 2, box_half > 0 and kl_samples ≥ 2 required".into());
            }
        }
        if self.mode == Mode::Mri {
            if self.mri.accelerations.iter().any(|a| !(*a >= 1.0)) || self.mri.accelerations.is_empty() {
                return bad("mri.accelerations must be a non-empty list of values ≥ 1".into());
            }
            if !(self.mri.noise_fraction > 0.0) {
                return bad("mri.noise_fraction must be positive".into());
            }
        }
        if let Some(g) = &self.simulate.gains {
            if !(g.min > 0.0 && g.max >= g.min) {
                return bad("simulate.gains needs 0 < min ≤ max".into());
            }
        }
        if !(self.simulate.flux > 0.0) {
            return bad("simulate.flux must be positive".into());
        }
        if self.mode == Mode::Toy
            && (self.prior.gaussian.is_some() || self.prior.tv.is_some() || self.prior.tsv.is_some()
                || self.prior.l1.is_some() || self.prior.mem.is_some())
        {
            return bad("toy mode takes no image prior".into());
        }
        Ok(())
    }

    /// `path` if set, otherwise `<output_dir>/data/<name>`.
    pub fn data_path(&self, path: &Option<PathBuf>, name: &str) -> PathBuf {
        path.clone().unwrap_or_else(|| self.output_dir.join("data").join(name))
    }
}
