//! Probabilistic inference of Hessians from noisy Hessian-vector products.
//!
//! [`active::run_inference`] collects products along actively chosen
//! directions and fits a matrix-variate Gaussian posterior whose mean is a
//! prior multiple of the identity plus a low-rank correction.
//! [`precond`] turns that estimate into a pre-conditioner (or a scalar step
//! length) for stochastic gradient descent, and [`harness`] runs the
//! comparison experiments on the problems in [`problems`].

pub mod active;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod precond;
pub mod problems;

pub use active::{
    estimate_parameters, run_inference, Batch, EstimationMode, HessianOracle, InferenceRun,
    PriorEstimates, SolverConfig, SolverError,
};
pub use inference::{
    infer, infer_noise_free, infer_noisy, InferenceError, MatrixPrior, NoiseModel, ObservationSet,
    PosteriorMean,
};
pub use linalg::{DenseMatrix, LinalgError, LowRankFactorPair};
pub use precond::{build, reduce_rank, scalar_step, PrecondError, Preconditioner, ScalarStep, SpectralApprox};
