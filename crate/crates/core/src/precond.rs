//! Low-rank pre-conditioners built from a [`PosteriorMean`].
//!
//! The rank-m low-rank part of the posterior is truncated to its top-k
//! singular triplets, giving `B ≈ U·Σ·Uᵀ`. The pre-conditioner
//!
//! `P = α·(I + U·(β·Σ^{-1/2} − I)·Uᵀ)`, `α² = Σ₁/Σ_k`,
//!
//! rescales the estimated eigen-directions to curvature `β²` and leaves the
//! complement alone; SGD then steps along `−η·P²·g`. The `α²` step inflation
//! is carried by `P` itself, so callers use the raw learning rate.

use log::warn;
use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active::PriorEstimates;
use crate::inference::PosteriorMean;
use crate::linalg::{thin_svd_product, LinalgError};

/// Relative floor below which trailing singular values are dropped.
pub const RANK_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrecondError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("requested rank {k} outside 1..={m}")]
    InvalidRank { k: usize, m: usize },
    #[error("invalid spectral approximation: {0}")]
    InvalidSpectrum(String),
    #[error("invalid scale: {0}")]
    InvalidScale(String),
    #[error("non-positive curvature estimate {0:.3e}")]
    NonPositiveEstimate(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// `B ≈ U·diag(Σ)·Uᵀ` with orthonormal `U` (N×k) and descending positive `Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralApprox {
    u: Array2<f64>,
    sigma: Array1<f64>,
}

impl SpectralApprox {
    pub fn new(u: Array2<f64>, sigma: Array1<f64>) -> Result<Self, PrecondError> {
        let k = sigma.len();
        if u.ncols() != k {
            return Err(PrecondError::InvalidSpectrum(format!(
                "{} basis vectors for {k} values",
                u.ncols()
            )));
        }
        if sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(PrecondError::InvalidSpectrum(
                "values must be positive and finite".into(),
            ));
        }
        if sigma.windows(2).into_iter().any(|w| w[0] < w[1]) {
            return Err(PrecondError::InvalidSpectrum("values must be descending".into()));
        }
        let gram = u.t().dot(&u);
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { 1.0 } else { 0.0 };
                if (gram[[i, j]] - want).abs() > 1e-10 {
                    return Err(PrecondError::InvalidSpectrum(
                        "basis is not orthonormal".into(),
                    ));
                }
            }
        }
        Ok(Self { u, sigma })
    }

    /// No estimated directions: `P = I`.
    pub fn empty(n: usize) -> Self {
        Self {
            u: Array2::zeros((n, 0)),
            sigma: Array1::zeros(0),
        }
    }

    pub fn basis(&self) -> &Array2<f64> {
        &self.u
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `Σ₁/Σ_k`, the estimated condition ratio of the captured subspace.
    pub fn condition_ratio(&self) -> f64 {
        match (self.sigma.first(), self.sigma.last()) {
            (Some(first), Some(last)) => first / last,
            _ => 1.0,
        }
    }
}

/// Top-k left singular vectors and values of the posterior's low-rank part.
pub fn reduce_rank(posterior: &PosteriorMean, k: usize) -> Result<SpectralApprox, PrecondError> {
    let m = posterior.rank();
    if k == 0 || k > m {
        return Err(PrecondError::InvalidRank { k, m });
    }
    let svd = thin_svd_product(&posterior.factors)?;
    let top = svd.singular_values[0];
    let mut keep = k;
    while keep > 0 && !(svd.singular_values[keep - 1] > RANK_FLOOR * top) {
        keep -= 1;
    }
    if keep < k {
        warn!("rank reduced from {k} to {keep}: trailing singular values are negligible");
    }
    let u = svd.u.slice(s![.., ..keep]).to_owned();
    let sigma = svd.singular_values.slice(s![..keep]).to_owned();
    SpectralApprox::new(u, sigma)
}

/// Multiply-add tally for the O(N·k) apply path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub mul_adds: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preconditioner {
    spectral: SpectralApprox,
    alpha: f64,
    beta: f64,
}

/// Builds `P` and returns it with the learning rate to use alongside it.
///
/// `α² = Σ₁/Σ_k` already sits inside `P`, so the returned rate is `base_lr`
/// unchanged.
pub fn build(
    spectral: SpectralApprox,
    beta: f64,
    base_lr: f64,
) -> Result<(Preconditioner, f64), PrecondError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(PrecondError::InvalidScale(format!("beta must be positive, got {beta}")));
    }
    if !(base_lr >= 0.0) || !base_lr.is_finite() {
        return Err(PrecondError::InvalidScale(format!(
            "learning rate must be non-negative, got {base_lr}"
        )));
    }
    let alpha = spectral.condition_ratio().sqrt();
    Ok((
        Preconditioner {
            spectral,
            alpha,
            beta,
        },
        base_lr,
    ))
}

impl Preconditioner {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn spectral(&self) -> &SpectralApprox {
        &self.spectral
    }

    pub fn dim(&self) -> usize {
        self.spectral.dim()
    }

    pub fn rank(&self) -> usize {
        self.spectral.rank()
    }

    /// Numbers held: `U`, `Σ`, `α`, `β`.
    pub fn stored_numbers(&self) -> usize {
        self.dim() * self.rank() + self.rank() + 2
    }

    /// `P²·g = α²·(g − U·Uᵀg + U·diag(β²/Σ)·Uᵀg)`.
    pub fn apply_p_squared(&self, g: &Array1<f64>) -> Result<Array1<f64>, PrecondError> {
        self.apply_p_squared_counted(g, &mut OpCounter::default())
    }

    pub fn apply_p_squared_counted(
        &self,
        g: &Array1<f64>,
        counter: &mut OpCounter,
    ) -> Result<Array1<f64>, PrecondError> {
        let coeff = |sigma: f64| self.beta * self.beta / sigma - 1.0;
        self.apply_spectral(g, coeff, self.alpha * self.alpha, counter)
    }

    /// `P·g`, mostly useful for checks.
    pub fn apply_p(&self, g: &Array1<f64>) -> Result<Array1<f64>, PrecondError> {
        let coeff = |sigma: f64| self.beta / sigma.sqrt() - 1.0;
        self.apply_spectral(g, coeff, self.alpha, &mut OpCounter::default())
    }

    fn apply_spectral(
        &self,
        g: &Array1<f64>,
        coeff: impl Fn(f64) -> f64,
        scale: f64,
        counter: &mut OpCounter,
    ) -> Result<Array1<f64>, PrecondError> {
        let n = self.dim();
        if g.len() != n {
            return Err(PrecondError::DimensionMismatch {
                expected: n,
                got: g.len(),
            });
        }
        let u = self.spectral.basis();
        let mut out = g.clone();
        for (j, &sigma) in self.spectral.values().iter().enumerate() {
            let col = u.column(j);
            let proj = col.dot(g);
            out.scaled_add(proj * coeff(sigma), &col);
            counter.mul_adds += 2 * n as u64 + 1;
        }
        out *= scale;
        counter.mul_adds += n as u64;
        Ok(out)
    }

    /// Dense `P`. Tests only.
    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.dim();
        let mut p = Array2::<f64>::eye(n);
        let u = self.spectral.basis();
        for (j, &sigma) in self.spectral.values().iter().enumerate() {
            let col = u.column(j);
            let c = self.beta / sigma.sqrt() - 1.0;
            for a in 0..n {
                for b in 0..n {
                    p[[a, b]] += c * col[a] * col[b];
                }
            }
        }
        p * self.alpha
    }
}

/// Flat on-disk form of a [`Preconditioner`]; `u` is row-major N×k.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreconditionerRecord {
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: Vec<f64>,
    pub u: Vec<f64>,
}

impl From<&Preconditioner> for PreconditionerRecord {
    fn from(p: &Preconditioner) -> Self {
        Self {
            n: p.dim(),
            k: p.rank(),
            alpha: p.alpha,
            beta: p.beta,
            sigma: p.spectral.values().to_vec(),
            u: p.spectral.basis().iter().copied().collect(),
        }
    }
}

impl TryFrom<PreconditionerRecord> for Preconditioner {
    type Error = PrecondError;

    fn try_from(r: PreconditionerRecord) -> Result<Self, Self::Error> {
        let u = Array2::from_shape_vec((r.n, r.k), r.u)
            .map_err(|e| PrecondError::InvalidSpectrum(e.to_string()))?;
        let spectral = SpectralApprox::new(u, Array1::from_vec(r.sigma))?;
        if !(r.alpha > 0.0) || !(r.beta > 0.0) {
            return Err(PrecondError::InvalidScale("alpha and beta must be positive".into()));
        }
        Ok(Self {
            spectral,
            alpha: r.alpha,
            beta: r.beta,
        })
    }
}

/// Step length `η = 1/b0` for the scalar adaptation mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarStep {
    pub eta: f64,
}

pub fn scalar_step(estimates: &PriorEstimates) -> Result<ScalarStep, PrecondError> {
    let eta = 1.0 / estimates.b0;
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(PrecondError::NonPositiveEstimate(eta));
    }
    Ok(ScalarStep { eta })
}

impl ScalarStep {
    /// Adopts the new estimate, or keeps the current step if it is unusable.
    pub fn update(&mut self, estimates: &PriorEstimates) -> bool {
        match scalar_step(estimates) {
            Ok(next) => {
                *self = next;
                true
            }
            Err(e) => {
                warn!("keeping step length {}: {e}", self.eta);
                false
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::MatrixPrior;
    use crate::linalg::LowRankFactorPair;
    use ndarray::array;

    fn unit_spectral(values: Array1<f64>, n: usize) -> SpectralApprox {
        let k = values.len();
        let mut u = Array2::zeros((n, k));
        for i in 0..k {
            u[[i, i]] = 1.0;
        }
        SpectralApprox::new(u, values).unwrap()
    }

    #[test]
    fn flat_spectrum_has_unit_alpha() {
        let (p, lr) = build(unit_spectral(array![3.0, 3.0], 4), 1.0, 0.1).unwrap();
        assert_eq!(p.alpha(), 1.0);
        assert_eq!(lr, 0.1);
    }

    #[test]
    fn rank_one_has_unit_alpha() {
        let (p, _) = build(unit_spectral(array![42.0], 3), 1.0, 0.1).unwrap();
        assert_eq!(p.alpha(), 1.0);
    }

    #[test]
    fn alpha_squared_is_spectral_ratio() {
        let (p, _) = build(unit_spectral(array![100.0, 1.0], 3), 1.0, 0.1).unwrap();
        assert!((p.alpha() * p.alpha() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn empty_basis_scales_by_alpha_squared() {
        let (p, _) = build(SpectralApprox::empty(3), 1.0, 1.0).unwrap();
        let g = array![1.0, 2.0, 3.0];
        assert_eq!(p.apply_p_squared(&g).unwrap(), g);
    }

    #[test]
    fn complement_is_untouched_up_to_alpha() {
        let (p, _) = build(unit_spectral(array![9.0, 4.0], 4), 1.0, 1.0).unwrap();
        let g = array![0.0, 0.0, 1.0, -2.0];
        let out = p.apply_p_squared(&g).unwrap();
        let a2 = p.alpha() * p.alpha();
        for (o, x) in out.iter().zip(g.iter()) {
            assert!((o - a2 * x).abs() < 1e-15);
        }
    }

    #[test]
    fn leading_direction_scaled_by_inverse_value() {
        let (p, _) = build(unit_spectral(array![9.0, 4.0], 4), 1.0, 1.0).unwrap();
        let out = p.apply_p_squared(&array![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((out[0] - 2.25 / 9.0).abs() < 1e-15);
        assert!(out.iter().skip(1).all(|&x| x == 0.0));
    }

    #[test]
    fn rank_one_unit_factor() {
        let q = array![[0.6], [0.8], [0.0]];
        let post = PosteriorMean {
            prior: MatrixPrior::new(7.0, 1.0, 3).unwrap(),
            factors: LowRankFactorPair::new(q.clone(), q.clone()).unwrap(),
        };
        let sp = reduce_rank(&post, 1).unwrap();
        assert!((sp.values()[0] - 1.0).abs() < 1e-14);
        let dot = sp.basis().column(0).dot(&q.column(0));
        assert!((dot.abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn invalid_rank_requests() {
        let post = PosteriorMean::prior_only(MatrixPrior::new(1.0, 1.0, 3).unwrap());
        assert!(matches!(reduce_rank(&post, 1), Err(PrecondError::InvalidRank { .. })));
    }

    #[test]
    fn negligible_trailing_values_shrink_rank() {
        let a = array![[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]];
        let post = PosteriorMean {
            prior: MatrixPrior::new(1.0, 1.0, 3).unwrap(),
            factors: LowRankFactorPair::new(a.clone(), a).unwrap(),
        };
        assert_eq!(reduce_rank(&post, 2).unwrap().rank(), 1);
    }

    #[test]
    fn scalar_step_keeps_previous_on_bad_estimate() {
        let mut step = ScalarStep { eta: 0.5 };
        let bad = PriorEstimates {
            b0: -1.0,
            w0: 1.0,
            lambda0: 0.0,
            mean_gradient: array![1.0],
        };
        assert!(!step.update(&bad));
        assert_eq!(step.eta, 0.5);
        let good = PriorEstimates { b0: 4.0, ..bad };
        assert!(step.update(&good));
        assert_eq!(step.eta, 0.25);
    }

    #[test]
    fn record_round_trip() {
        let (p, _) = build(unit_spectral(array![5.0, 2.0], 3), 0.5, 1.0).unwrap();
        let rec = PreconditionerRecord::from(&p);
        let back = Preconditioner::try_from(rec).unwrap();
        assert_eq!(back, p);
    }
}
