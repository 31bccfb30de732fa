//! Trajectory-ensemble simulator for open quantum systems driven by
//! complex-valued colored Gaussian noise with prescribed pseudo-correlations.
//!
//! The pipeline: `correlation` tabulates bath kernels from a spectral
//! density, `noise` turns them into samplable noise paths, `dynamics`
//! integrates single trajectories of the expectation-value vector, and
//! `ensemble` averages estimators over many trajectories. `models` holds the
//! benchmark catalog and `config`/`cli` the JSON front end.

pub mod cli;
pub mod config;
pub mod correlation;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod grid;
pub mod models;
pub mod noise;

pub use error::{Result, ScleError};
