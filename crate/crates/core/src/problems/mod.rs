//! Test problems with stochastic gradient and Hessian-vector product oracles,
//! their exact baselines, and synthetic data.

mod cg;
mod data;
mod features;
mod logistic;
mod mlp;
mod quadratic;
mod sampler;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::active::{Batch, HessianOracle};
use crate::linalg::LinalgError;

pub use cg::{cg_baseline, CgIterate, CgOutcome};
pub use data::{gaussian_clusters, two_gaussians, Dataset};
pub use features::{feature_matrix, polynomial_features, FeatureMapSpec, MonomialOrder};
pub use logistic::{logistic_oracle, newton_solve, ClassificationSpec, LogisticOracle, LogisticProblem};
pub use mlp::{mlp_hvp, Activation, HvpMode, MlpOracle, MlpSpec, ToyNet, ToyNetLoss};
pub use quadratic::{
    avg_inv_baseline, batch_oracle, exact_solution, AvgInv, QuadraticOracle, QuadraticProblem,
    RegressionSpec,
};
pub use sampler::{mix_seed, BatchSampler};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Exact quadratic `½wᵀBw − bᵀw`: every "batch" returns the true gradient
/// and product, but each draw is still charged `batch_size` samples.
#[derive(Debug, Clone)]
pub struct ExactQuadratic {
    hessian: Array2<f64>,
    rhs: Array1<f64>,
    batch_size: usize,
    data_read: u64,
}

impl ExactQuadratic {
    pub fn new(hessian: Array2<f64>, rhs: Array1<f64>, batch_size: usize) -> Self {
        assert_eq!(hessian.nrows(), rhs.len(), "hessian and rhs disagree in size");
        assert_eq!(hessian.nrows(), hessian.ncols(), "hessian must be square");
        Self {
            hessian,
            rhs,
            batch_size,
            data_read: 0,
        }
    }

    pub fn hessian(&self) -> &Array2<f64> {
        &self.hessian
    }

    pub fn rhs(&self) -> &Array1<f64> {
        &self.rhs
    }
}

impl HessianOracle for ExactQuadratic {
    fn dim(&self) -> usize {
        self.rhs.len()
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn data_read(&self) -> u64 {
        self.data_read
    }

    fn sample_batch(&mut self) -> Batch {
        self.data_read += self.batch_size as u64;
        Batch::new(Vec::new())
    }

    fn batch_gradient(&self, w: &Array1<f64>, _batch: &Batch) -> Array1<f64> {
        self.hessian.dot(w) - &self.rhs
    }

    fn batch_hvp(&self, _w: &Array1<f64>, s: &Array1<f64>, _batch: &Batch) -> Array1<f64> {
        self.hessian.dot(s)
    }
}
