//! Measurement models: interferometric visibilities and closure
//! quantities, masked-Fourier MRI, and 2-D toy potentials.

mod array;
mod closure;
mod fft;
mod grid;
mod images;
mod mri;
mod toy;
mod vis;

pub use array::{default_stations, synthesize_coverage, thermal_sigma, ArraySpec, CoverageRow, Station, UVCoverage};
pub use closure::{
    chi2_closure, closure_geometry, closure_phases, closure_set, log_closure_amplitudes, wrap_phase,
    BaselineIndex, ClosureChi2, ClosureGeometry, ClosureLikelihood, ClosurePhase, ClosureSet, Leg,
    LogClosureAmplitude,
};
pub use fft::{fft2_centered, fft2_centered_adjoint, ifft2_centered};
pub use grid::{ImageGrid, RAD_PER_UAS};
pub use images::{asymmetric_ring, crescent, gaussian_blob, knee_phantom};
pub use mri::{
    chi2_mri, mri_forward, simulate_mri, variable_density_masks, KSpaceData, MaskDensity, MriLikelihood,
    MriMask, DEFAULT_NOISE_FRACTION,
};
pub use toy::{GmmComponent, ToyPotential};
pub use vis::{build_dft_matrix, chi2_vis, simulate_visibilities, DftMatrix, StationGains, VisLikelihood, VisibilitySet};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForwardError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid coverage: {0}")]
    InvalidCoverage(String),
    #[error("expected length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("no baseline {a}-{b} at t={t}")]
    MissingBaseline { t: f64, a: usize, b: usize },
    #[error("degenerate triangle {stations:?} at t={t}: zero-amplitude leg")]
    DegenerateTriangle { t: f64, stations: [usize; 3] },
    #[error("degenerate quadrangle {stations:?} at t={t}: zero-amplitude leg")]
    DegenerateQuadrangle { t: f64, stations: [usize; 4] },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
}
