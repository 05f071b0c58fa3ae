//! Stochastic fundamental diagram estimation.
//!
//! The crate calibrates classical deterministic speed-density models by
//! weighted least squares, fits exact and sparse variational Gaussian-process
//! regressions on density-speed data (optionally using a calibrated
//! deterministic model as the prior mean), and evaluates every variant with
//! RMSE / MAPE / predictive-interval coverage.
//!
//! Units throughout: density in vehicles per mile, speed in miles per hour,
//! flow in vehicles per hour.
//!
//! With the default `parallel` feature the hot inner loops (Gram matrices,
//! multi-start searches, batched predictions) run on rayon. Disabling the
//! feature compiles a sequential fallback that produces bit-identical
//! results: all parallel work is split at fixed chunk boundaries and merged
//! in index order.

pub mod calibrate;
pub mod dataset;
pub mod gpr;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod models;
mod optimize;
mod parallel;
pub mod sampling;
pub mod sgpr;

pub use dataset::{CsvColumns, DensitySpeedDataset, DensitySpeedPair};
pub use gpr::{GPConfig, GPPosterior};
pub use kernel::{GramMatrix, KernelKind, KernelParams};
pub use models::{FDModel, FDModelSpec, MultiRegimeModel};
pub use sgpr::{InducingSet, SparseFit};
