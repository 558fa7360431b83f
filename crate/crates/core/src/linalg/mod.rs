//! Dense kernels for the small (m×m) and tall-skinny (N×m) matrices used by
//! the inference and pre-conditioning layers.
//!
//! Everything here is single-threaded and allocation-light; the square
//! matrices handled are at most a few dozen rows, so the algorithms favour
//! accuracy (cyclic Jacobi, Householder) over asymptotic speed.

mod decomp;
mod eig;
mod svd;
mod woodbury;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decomp::{cholesky, solve_lower, solve_lower_transpose, thin_qr, Lu};
pub use eig::{generalized_sym_eig, sym_eig, EigenDecomposition, GeneralizedEigenResult};
pub use svd::{jacobi_svd, thin_svd_product, ThinSvd};
pub use woodbury::{woodbury_solve, CAPACITANCE_CONDITION_LIMIT};

/// Row-major dense matrix of reals.
pub type DenseMatrix = Array2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not symmetric: ‖M − Mᵀ‖ = {asymmetry:.3e} exceeds {tolerance:.3e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },
    #[error("matrix is not positive definite: Cholesky pivot {pivot} is {value:.3e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("capacitance matrix is singular (condition estimate {condition:.3e})")]
    SingularCapacitance { condition: f64 },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("factor rank {rank} exceeds the ambient dimension {dim}")]
    RankExceedsDimension { rank: usize, dim: usize },
}

/// Two N×m factors standing for the N×N product `A·Cᵀ`, which is never formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankFactorPair {
    pub a: DenseMatrix,
    pub c: DenseMatrix,
}

impl LowRankFactorPair {
    pub fn new(a: DenseMatrix, c: DenseMatrix) -> Result<Self, LinalgError> {
        if a.dim() != c.dim() {
            return Err(LinalgError::DimensionMismatch(format!(
                "factor shapes differ: {:?} vs {:?}",
                a.dim(),
                c.dim()
            )));
        }
        Ok(Self { a, c })
    }

    /// An N×0 pair, i.e. the zero matrix.
    pub fn empty(n: usize) -> Self {
        Self {
            a: Array2::zeros((n, 0)),
            c: Array2::zeros((n, 0)),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    /// `A·(Cᵀ·v)` in O(N·m).
    pub fn apply(&self, v: &Array1<f64>) -> Array1<f64> {
        self.a.dot(&self.c.t().dot(v))
    }

    /// Materialises `A·Cᵀ`. Only meant for tests and small problems.
    pub fn to_dense(&self) -> DenseMatrix {
        self.a.dot(&self.c.t())
    }
}

pub(crate) fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn ensure_square(m: &Array2<f64>) -> Result<usize, LinalgError> {
    let (rows, cols) = m.dim();
    if rows != cols {
        return Err(LinalgError::NotSquare { rows, cols });
    }
    Ok(rows)
}

/// Indices that sort `values` in descending order; ties keep their input order.
pub(crate) fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}
