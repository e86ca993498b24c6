//! Hypothesis tests for anisotropy in spatial Gaussian random fields.
//!
//! Two tests are provided: a parametric bootstrap likelihood-ratio test
//! ([`test_parametric`]) and a non-parametric rotational sampling test
//! ([`test_rotational`]), together with the exponential kernels, field
//! simulation, variograms and data plumbing they rely on.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod field_sim;
pub mod inference;
pub mod kernels;
pub mod linalg;
pub mod optimize;
pub mod output;
pub mod test_parametric;
pub mod test_rotational;
pub mod variogram;

pub use dataset::{load_dataset, preprocess, SpatialSample};
pub use error::{Error, Result};
pub use experiment::{run_experiment_grid, ExperimentGrid};
pub use inference::{fit_kernel_mle, log_likelihood, AxisMode, FitResult, HypothesisPair, KernelFamily, OptimizerConfig};
pub use field_sim::RngStream;
pub use kernels::{CoordinateSet, KernelParams, KernelShape, LagVector};
pub use test_parametric::{parametric_bootstrap_test, TestResult};
pub use test_rotational::{rotational_test, RotationalConfig};
