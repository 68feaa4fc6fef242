//! Quality-gated active learning for structure-property mapping.
//!
//! The crate implements a pool-based active-learning benchmark in which an
//! encoder-decoder model learns a mapping between local image patches and
//! band-excitation hysteresis loops. Acquisition strategies (`Random`,
//! `Active`, `ActiveMT`, `ActiveQC`) compete on a synthetic dataset with
//! spatially localized spectral noise. `ActiveQC` augments curiosity-driven
//! scoring with a physics-informed quality gate: every measured spectrum is
//! scored by the mean R² of per-bias simple-harmonic-oscillator fits, a
//! Gaussian process regresses that quality over the sample plane, and
//! candidates whose predicted quality falls below a threshold are excluded
//! from both acquisition and training.
//!
//! Modules:
//! - [`sho`]: complex SHO model evaluation, Levenberg-Marquardt fitting,
//!   R²-based quality scores, hysteresis-loop assembly.
//! - [`gp`]: exact Gaussian-process regression over 2-D coordinates.
//! - [`nn`]: small dense encoder-decoder networks and the surrogate error
//!   model, trained with analytically derived gradients.
//! - [`acquisition`]: score components, the combined acquisition score, the
//!   quality gate and batch selection.
//! - [`data`]: synthetic benchmark generation, noise injection,
//!   normalization, splits and the virtual instrument.
//! - [`harness`]: the acquisition loop, per-trial/per-experiment metrics,
//!   Welch statistics and map export.

pub mod acquisition;
pub mod data;
pub mod gp;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod sho;
