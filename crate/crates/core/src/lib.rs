//! Post-processing for multi-output models that moves each group's output
//! distribution toward an approximate Wasserstein-2 barycenter.

pub mod barycenter;
pub mod discrete_ot;
pub mod error;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod postprocess;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
