//! Deep probabilistic imaging.
//!
//! An untrained Real-NVP flow is fitted so that its samples follow the
//! posterior of an image given measurements: the objective combines a data
//! fitting loss, an image regularizer and a weighted entropy term. Forward
//! models cover interferometric visibilities, closure quantities, masked
//! Fourier (MRI) sampling and 2D toy potentials.

pub mod analysis;
pub mod diffcore;
pub mod flow;
pub mod forward;
pub mod priors;
pub mod trainer;
