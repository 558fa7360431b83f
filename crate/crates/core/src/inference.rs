//! Gaussian inference on a latent square matrix `B` from noisy projections
//! `Y = B̃·S`.
//!
//! The prior is matrix-variate Gaussian with mean `B₀ = b0·I` and Kronecker
//! covariance `W ⊗ W`, `W = w0·I`. Observation noise has Kronecker structure
//! `Λ ⊗ diag((SᵀΛS)ᵢᵢ)` with `Λ = λ0·I`; the right factor is diagonal because
//! every column of `Y` comes from an independent mini-batch.
//!
//! The posterior mean is kept as `B_m = b0·I + A·Cᵀ` with `A = W·X`,
//! `C = W·S`, which supports O(N·m) products and Woodbury solves.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    cholesky, generalized_sym_eig, solve_lower, solve_lower_transpose, woodbury_solve,
    DenseMatrix, LinalgError, LowRankFactorPair,
};

/// Probes whose component orthogonal to the earlier probes has relative
/// squared norm below this count as linearly dependent in the noise-free path.
const DEPENDENCE_TOLERANCE: f64 = 1e-20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("probe column {column} is linearly dependent on the preceding probes")]
    DependentProbe { column: usize },
    #[error("probe column {column} is zero")]
    ZeroProbe { column: usize },
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// `B₀ = b0·I`, `W = w0·I` on an n-dimensional space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixPrior {
    pub b0: f64,
    pub w0: f64,
    pub n: usize,
}

impl MatrixPrior {
    pub fn new(b0: f64, w0: f64, n: usize) -> Result<Self, InferenceError> {
        if !(w0 > 0.0) || !w0.is_finite() {
            return Err(InferenceError::InvalidPrior(format!(
                "w0 must be positive and finite, got {w0}"
            )));
        }
        if !b0.is_finite() {
            return Err(InferenceError::InvalidPrior(format!("b0 must be finite, got {b0}")));
        }
        if n == 0 {
            return Err(InferenceError::InvalidPrior("dimension must be at least 1".into()));
        }
        Ok(Self { b0, w0, n })
    }
}

/// `Λ = λ0·I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub lambda0: f64,
}

impl NoiseModel {
    pub fn new(lambda0: f64) -> Result<Self, InferenceError> {
        if !(lambda0 >= 0.0) || !lambda0.is_finite() {
            return Err(InferenceError::InvalidPrior(format!(
                "noise scale must be non-negative, got {lambda0}"
            )));
        }
        Ok(Self { lambda0 })
    }

    pub fn noise_free() -> Self {
        Self { lambda0: 0.0 }
    }

    /// `(SᵀΛS)ᵢᵢ = λ0·‖s‖²` for one probe.
    pub fn column_variance(&self, s: &Array1<f64>) -> f64 {
        self.lambda0 * s.dot(s)
    }
}

/// Probes `S`, observed products `Y` and the diagonal `(SᵀΛS)ᵢᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    s: DenseMatrix,
    y: DenseMatrix,
    noise_diag: Array1<f64>,
}

impl ObservationSet {
    pub fn new(n: usize) -> Self {
        Self {
            s: Array2::zeros((n, 0)),
            y: Array2::zeros((n, 0)),
            noise_diag: Array1::zeros(0),
        }
    }

    /// Builds a set from whole matrices, deriving `noise_diag` from `noise`.
    pub fn from_columns(
        s: DenseMatrix,
        y: DenseMatrix,
        noise: &NoiseModel,
    ) -> Result<Self, InferenceError> {
        if s.dim() != y.dim() {
            return Err(InferenceError::DimensionMismatch(format!(
                "S is {:?} but Y is {:?}",
                s.dim(),
                y.dim()
            )));
        }
        let mut set = Self::new(s.nrows());
        for (sc, yc) in s.columns().into_iter().zip(y.columns()) {
            set.push_with_noise(sc.to_owned(), yc.to_owned(), noise)?;
        }
        Ok(set)
    }

    /// Appends a probe/product pair with its own observation variance.
    pub fn push(
        &mut self,
        s: Array1<f64>,
        y: Array1<f64>,
        variance: f64,
    ) -> Result<(), InferenceError> {
        let n = self.dim();
        if s.len() != n || y.len() != n {
            return Err(InferenceError::DimensionMismatch(format!(
                "expected vectors of length {n}, got {} and {}",
                s.len(),
                y.len()
            )));
        }
        if !(variance >= 0.0) {
            return Err(InferenceError::InvalidPrior(format!(
                "observation variance must be non-negative, got {variance}"
            )));
        }
        if s.iter().all(|&x| x == 0.0) {
            return Err(InferenceError::ZeroProbe { column: self.len() });
        }
        self.s.push_column(s.view()).expect("shape checked");
        self.y.push_column(y.view()).expect("shape checked");
        self.noise_diag
            .append(Axis(0), Array1::from_elem(1, variance).view())
            .expect("1-d append");
        Ok(())
    }

    pub fn push_with_noise(
        &mut self,
        s: Array1<f64>,
        y: Array1<f64>,
        noise: &NoiseModel,
    ) -> Result<(), InferenceError> {
        let variance = noise.column_variance(&s);
        self.push(s, y, variance)
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn len(&self) -> usize {
        self.s.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn probes(&self) -> &DenseMatrix {
        &self.s
    }

    pub fn products(&self) -> &DenseMatrix {
        &self.y
    }

    pub fn noise_diag(&self) -> &Array1<f64> {
        &self.noise_diag
    }
}

/// Low-rank posterior mean `B_m = b0·I + A·Cᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PosteriorMeanRecord", try_from = "PosteriorMeanRecord")]
pub struct PosteriorMean {
    pub prior: MatrixPrior,
    pub factors: LowRankFactorPair,
}

impl PosteriorMean {
    pub fn prior_only(prior: MatrixPrior) -> Self {
        Self {
            prior,
            factors: LowRankFactorPair::empty(prior.n),
        }
    }

    pub fn dim(&self) -> usize {
        self.prior.n
    }

    pub fn rank(&self) -> usize {
        self.factors.rank()
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.factors.a
    }

    pub fn c(&self) -> &DenseMatrix {
        &self.factors.c
    }

    /// `b0·v + A·(Cᵀ·v)`.
    pub fn apply(&self, v: &Array1<f64>) -> Result<Array1<f64>, InferenceError> {
        self.check_len(v)?;
        let mut out = self.factors.apply(v);
        out.scaled_add(self.prior.b0, v);
        Ok(out)
    }

    /// `B_m⁻¹·v` through the matrix inversion lemma.
    pub fn solve(&self, v: &Array1<f64>) -> Result<Array1<f64>, InferenceError> {
        self.check_len(v)?;
        Ok(woodbury_solve(self.prior.b0, &self.factors, v)?)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = self.factors.to_dense();
        for i in 0..self.dim() {
            m[[i, i]] += self.prior.b0;
        }
        m
    }

    fn check_len(&self, v: &Array1<f64>) -> Result<(), InferenceError> {
        if v.len() != self.dim() {
            return Err(InferenceError::DimensionMismatch(format!(
                "vector of length {} for a {}x{} posterior",
                v.len(),
                self.dim(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Flat on-disk form of a [`PosteriorMean`]; factors are row-major N×m.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorMeanRecord {
    pub n: usize,
    pub m: usize,
    pub b0: f64,
    pub w0: f64,
    pub a: Vec<f64>,
    pub c: Vec<f64>,
}

impl From<PosteriorMean> for PosteriorMeanRecord {
    fn from(p: PosteriorMean) -> Self {
        Self {
            n: p.dim(),
            m: p.rank(),
            b0: p.prior.b0,
            w0: p.prior.w0,
            a: p.factors.a.iter().copied().collect(),
            c: p.factors.c.iter().copied().collect(),
        }
    }
}

impl TryFrom<PosteriorMeanRecord> for PosteriorMean {
    type Error = String;

    fn try_from(r: PosteriorMeanRecord) -> Result<Self, Self::Error> {
        let prior = MatrixPrior::new(r.b0, r.w0, r.n).map_err(|e| e.to_string())?;
        let a = Array2::from_shape_vec((r.n, r.m), r.a).map_err(|e| e.to_string())?;
        let c = Array2::from_shape_vec((r.n, r.m), r.c).map_err(|e| e.to_string())?;
        let factors = LowRankFactorPair::new(a, c).map_err(|e| e.to_string())?;
        Ok(Self { prior, factors })
    }
}

fn residual(prior: &MatrixPrior, obs: &ObservationSet) -> Result<DenseMatrix, InferenceError> {
    if obs.dim() != prior.n {
        return Err(InferenceError::DimensionMismatch(format!(
            "observations live in dimension {}, prior in {}",
            obs.dim(),
            prior.n
        )));
    }
    // Δ = Y − B₀·S
    Ok(obs.products() - &(obs.probes() * prior.b0))
}

/// Exact-observation posterior mean
/// `B_m = B₀ + (Y − B₀S)(SᵀWS)⁻¹SᵀW`, which interpolates `B_m·S = Y`.
pub fn infer_noise_free(
    prior: &MatrixPrior,
    obs: &ObservationSet,
) -> Result<PosteriorMean, InferenceError> {
    let delta = residual(prior, obs)?;
    if obs.is_empty() {
        return Ok(PosteriorMean::prior_only(*prior));
    }
    let s = obs.probes();
    let gram = s.t().dot(s) * prior.w0;
    let l = cholesky(&gram).map_err(|e| match e {
        LinalgError::NotPositiveDefinite { pivot, .. } => InferenceError::DependentProbe { column: pivot },
        other => other.into(),
    })?;
    for i in 0..l.nrows() {
        if l[[i, i]] * l[[i, i]] <= DEPENDENCE_TOLERANCE * gram[[i, i]] {
            return Err(InferenceError::DependentProbe { column: i });
        }
    }
    // X = W⁻¹·Δ·(SᵀWS)⁻¹, so A = W·X = Δ·(SᵀWS)⁻¹
    let a_t = solve_lower_transpose(&l, &solve_lower(&l, &delta.t().to_owned()));
    let a = a_t.t().to_owned();
    let c = s * prior.w0;
    Ok(PosteriorMean {
        prior: *prior,
        factors: LowRankFactorPair::new(a, c)?,
    })
}

/// Noisy-observation posterior mean.
///
/// Solves `W·X·(SᵀWS) + Λ·X·diag(noise_diag) = Δ`, the row-major reading of
/// `(W ⊗ SᵀWS + Λ ⊗ diag(noise_diag))·vec X = vec Δ`, with one generalized
/// eigendecomposition per Kronecker side:
///
/// * left pencil `(W, Λ)`: for scaled identities `W·U = Λ·U·D`, `UᵀΛU = I`
///   holds with `U = I/√λ0`, `D = (w0/λ0)·I`, independent of N;
/// * right pencil `(SᵀWS, diag(noise_diag))` gives `V`, `Ω`.
///
/// Then `Ψⱼᵢ = (UᵀΔV)ⱼᵢ / (Dⱼⱼ·Ωᵢᵢ + 1)` and `X = U·Ψ·Vᵀ`.
pub fn infer_noisy(
    prior: &MatrixPrior,
    noise: &NoiseModel,
    obs: &ObservationSet,
) -> Result<PosteriorMean, InferenceError> {
    if noise.lambda0 == 0.0 {
        return infer_noise_free(prior, obs);
    }
    let delta = residual(prior, obs)?;
    if obs.is_empty() {
        return Ok(PosteriorMean::prior_only(*prior));
    }
    if let Some(column) = obs.noise_diag().iter().position(|&d| !(d > 0.0)) {
        return Err(InferenceError::ZeroProbe { column });
    }
    let s = obs.probes();
    let gram = s.t().dot(s) * prior.w0;
    let metric = Array2::from_diag(obs.noise_diag());
    let right = generalized_sym_eig(&gram, &metric)?;

    let u_scale = 1.0 / noise.lambda0.sqrt();
    let d = prior.w0 / noise.lambda0;
    let mut psi = delta.dot(&right.vectors) * u_scale;
    for (i, mut col) in psi.columns_mut().into_iter().enumerate() {
        col /= d * right.values[i] + 1.0;
    }
    let x = psi.dot(&right.vectors.t()) * u_scale;
    Ok(PosteriorMean {
        prior: *prior,
        factors: LowRankFactorPair::new(x * prior.w0, s * prior.w0)?,
    })
}

/// Dispatches to the noisy or noise-free update.
pub fn infer(
    prior: &MatrixPrior,
    noise: &NoiseModel,
    obs: &ObservationSet,
) -> Result<PosteriorMean, InferenceError> {
    infer_noisy(prior, noise, obs)
}
