//! Navier-Stokes informed neural networks for inferring hidden velocity and
//! pressure fields from scattered observations of a passive scalar.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: hyper-dual forward derivatives nested in reverse-mode
//!   gradients.
//! * [`network`]: the sinusoidal multilayer perceptron and its derivative jet.
//! * [`physics`]: transport, momentum and continuity residuals.
//! * [`training`]: composite loss, Adam and the staged training loop.
//! * [`datagen`]: analytic flows, a pseudo-spectral scalar transport solver
//!   and scattered sampling.
//! * [`postproc`]: forces, wall shear stress, error reports and grid export.

pub mod autodiff;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod network;
pub mod physics;
pub mod postproc;
pub mod training;

pub use error::{HfmError, Result};
