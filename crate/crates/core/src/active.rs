//! Active selection of probe directions and the inference loop that turns
//! noisy Hessian-vector products into a [`PosteriorMean`].
//!
//! Each iteration applies the inverse of the current estimate to a fresh
//! stochastic gradient, observes one Hessian-vector product along the
//! result, and re-runs inference on everything collected so far. With exact
//! products this reproduces the Krylov directions of classic projection
//! solvers; with noisy ones the posterior suppresses directions already
//! explained by earlier observations.

use std::time::Instant;

use log::warn;
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{
    infer, InferenceError, MatrixPrior, NoiseModel, ObservationSet, PosteriorMean,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(
        "estimated curvature along the probe is {curvature:.3e} (not positive); \
         retry the estimation with fresh batches"
    )]
    NonPositiveCurvature { curvature: f64 },
    #[error("mean gradient is zero; nothing to probe")]
    ZeroGradient,
    #[error("residual is zero; the solve has converged or degenerated")]
    DegenerateResidual,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Indices of one mini-batch. Exact oracles ignore them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Source of independent stochastic gradients and Hessian-vector products.
///
/// Drawing a batch loads `batch_size` samples and charges them to
/// [`data_read`](HessianOracle::data_read); gradients and products evaluated
/// on an already drawn batch are free. The provided `noisy_*` methods draw a
/// fresh batch per call.
pub trait HessianOracle {
    fn dim(&self) -> usize;

    fn batch_size(&self) -> usize;

    /// Cumulative number of samples loaded.
    fn data_read(&self) -> u64;

    fn sample_batch(&mut self) -> Batch;

    fn batch_gradient(&self, w: &Array1<f64>, batch: &Batch) -> Array1<f64>;

    fn batch_hvp(&self, w: &Array1<f64>, s: &Array1<f64>, batch: &Batch) -> Array1<f64>;

    fn noisy_gradient(&mut self, w: &Array1<f64>) -> Array1<f64> {
        let batch = self.sample_batch();
        self.batch_gradient(w, &batch)
    }

    fn noisy_hvp(&mut self, w: &Array1<f64>, s: &Array1<f64>) -> Array1<f64> {
        let batch = self.sample_batch();
        self.batch_hvp(w, s, &batch)
    }
}

impl<O: HessianOracle + ?Sized> HessianOracle for &mut O {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn batch_size(&self) -> usize {
        (**self).batch_size()
    }
    fn data_read(&self) -> u64 {
        (**self).data_read()
    }
    fn sample_batch(&mut self) -> Batch {
        (**self).sample_batch()
    }
    fn batch_gradient(&self, w: &Array1<f64>, batch: &Batch) -> Array1<f64> {
        (**self).batch_gradient(w, batch)
    }
    fn batch_hvp(&self, w: &Array1<f64>, s: &Array1<f64>, batch: &Batch) -> Array1<f64> {
        (**self).batch_hvp(w, s, batch)
    }
}

impl<O: HessianOracle + ?Sized> HessianOracle for Box<O> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn batch_size(&self) -> usize {
        (**self).batch_size()
    }
    fn data_read(&self) -> u64 {
        (**self).data_read()
    }
    fn sample_batch(&mut self) -> Batch {
        (**self).sample_batch()
    }
    fn batch_gradient(&self, w: &Array1<f64>, batch: &Batch) -> Array1<f64> {
        (**self).batch_gradient(w, batch)
    }
    fn batch_hvp(&self, w: &Array1<f64>, s: &Array1<f64>, batch: &Batch) -> Array1<f64> {
        (**self).batch_hvp(w, s, batch)
    }
}

/// Full pre-conditioning or the high-dimensional scalar step adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EstimationMode {
    #[default]
    Full,
    Scalar,
}

/// Empirical prior and noise scales plus the mean gradient they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorEstimates {
    pub b0: f64,
    pub w0: f64,
    pub lambda0: f64,
    pub mean_gradient: Array1<f64>,
}

impl PriorEstimates {
    pub fn prior(&self) -> Result<MatrixPrior, InferenceError> {
        MatrixPrior::new(self.b0, self.w0, self.mean_gradient.len())
    }

    pub fn noise(&self) -> Result<NoiseModel, InferenceError> {
        NoiseModel::new(self.lambda0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub iterations: usize,
    pub init_samples: usize,
    pub normalize_probes: bool,
    pub mode: EstimationMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iterations: 16,
            init_samples: 5,
            normalize_probes: true,
            mode: EstimationMode::Full,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.iterations == 0 {
            return Err(SolverError::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.init_samples < 2 {
            return Err(SolverError::InvalidConfig(
                "init_samples must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Sets `b0`, `w0`, `λ0` from a few initial batches at `w`.
///
/// The probe is the mean gradient `s = ḡ`; the products `yₖ = B̃ₖ·s` reuse the
/// same batches as the gradients so the estimate costs `init_samples` batch
/// loads. With `ȳ` the mean product:
///
/// * `w0 = sᵀȳ / sᵀs`;
/// * full mode: `1/b0 = √(sᵀȳ / ȳᵀȳ)`, `λ0 = median_j Var[g_j] / √(sᵀs)`;
/// * scalar mode: `1/b0 = sᵀȳ / ȳᵀȳ`, `λ0 = √(Σ_j Var[g_j] / n)`.
///
/// Variances are population variances over the batches, accumulated with
/// Welford's update so identical gradients give exactly zero.
pub fn estimate_parameters<O: HessianOracle + ?Sized>(
    oracle: &mut O,
    w: &Array1<f64>,
    init_samples: usize,
    mode: EstimationMode,
) -> Result<PriorEstimates, SolverError> {
    if init_samples < 2 {
        return Err(SolverError::InvalidConfig(
            "init_samples must be at least 2".into(),
        ));
    }
    let n = oracle.dim();
    if w.len() != n {
        return Err(SolverError::DimensionMismatch(format!(
            "point has length {}, oracle dimension is {n}",
            w.len()
        )));
    }

    let batches: Vec<Batch> = (0..init_samples).map(|_| oracle.sample_batch()).collect();
    let mut mean = Array1::<f64>::zeros(n);
    let mut m2 = Array1::<f64>::zeros(n);
    for (k, batch) in batches.iter().enumerate() {
        let g = oracle.batch_gradient(w, batch);
        let count = (k + 1) as f64;
        for j in 0..n {
            let before = g[j] - mean[j];
            mean[j] += before / count;
            m2[j] += before * (g[j] - mean[j]);
        }
    }
    let s = mean;
    let ss = s.dot(&s);
    if !(ss > 0.0) {
        return Err(SolverError::ZeroGradient);
    }

    let mut y_mean = Array1::<f64>::zeros(n);
    for (k, batch) in batches.iter().enumerate() {
        let y = oracle.batch_hvp(w, &s, batch);
        let count = (k + 1) as f64;
        y_mean.zip_mut_with(&y, |m, &v| *m += (v - *m) / count);
    }
    let sy = s.dot(&y_mean);
    if !(sy > 0.0) {
        return Err(SolverError::NonPositiveCurvature { curvature: sy });
    }
    let yy = y_mean.dot(&y_mean);
    let w0 = sy / ss;
    let inv_b0 = match mode {
        EstimationMode::Full => (sy / yy).sqrt(),
        EstimationMode::Scalar => sy / yy,
    };

    let k = init_samples as f64;
    let mut variances: Vec<f64> = m2.iter().map(|v| (v / k).max(0.0)).collect();
    let lambda0 = match mode {
        EstimationMode::Full => median(&mut variances) / ss.sqrt(),
        EstimationMode::Scalar => (variances.iter().sum::<f64>() / n as f64).sqrt(),
    };

    Ok(PriorEstimates {
        b0: 1.0 / inv_b0,
        w0,
        lambda0,
        mean_gradient: s,
    })
}

/// A chosen probe direction and its length before normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub direction: Array1<f64>,
    pub raw_norm: f64,
}

/// `s = −B_m⁻¹·r`, optionally scaled to unit length.
///
/// A failed solve falls back to the prior-only inverse `−r/b0`.
pub fn next_direction(
    posterior: &PosteriorMean,
    r: &Array1<f64>,
    normalize: bool,
) -> Result<Probe, SolverError> {
    if r.iter().all(|&x| x == 0.0) {
        return Err(SolverError::DegenerateResidual);
    }
    let mut s = match posterior.solve(r) {
        Ok(x) => -x,
        Err(InferenceError::DimensionMismatch(msg)) => {
            return Err(SolverError::DimensionMismatch(msg))
        }
        Err(e) => {
            warn!("posterior solve failed ({e}); falling back to the prior inverse");
            r * (-1.0 / posterior.prior.b0)
        }
    };
    let raw_norm = s.dot(&s).sqrt();
    if !(raw_norm > 0.0) || !raw_norm.is_finite() {
        return Err(SolverError::DegenerateResidual);
    }
    if normalize {
        s /= raw_norm;
    }
    Ok(Probe {
        direction: s,
        raw_norm,
    })
}

/// One row of the solver's structured log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub probe_norm: f64,
    pub data_read: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct InferenceRun {
    pub posterior: PosteriorMean,
    pub observations: ObservationSet,
    pub log: Vec<IterationRecord>,
    /// Iterations whose observation made it into `posterior`.
    pub completed: usize,
}

/// The active inference loop.
///
/// Starts from the estimation's mean gradient, then per iteration: choose
/// `sᵢ = next_direction(B_{i−1}, r_{i−1})`, draw one batch, observe
/// `yᵢ = B̃·sᵢ` and the new gradient `rᵢ` on it, and re-infer from all
/// observations. The point `w` never moves. If inference fails the previous
/// posterior is returned.
pub fn run_inference<O: HessianOracle + ?Sized>(
    oracle: &mut O,
    w: &Array1<f64>,
    estimates: &PriorEstimates,
    config: &SolverConfig,
) -> Result<InferenceRun, SolverError> {
    config.validate()?;
    let n = oracle.dim();
    if w.len() != n || estimates.mean_gradient.len() != n {
        return Err(SolverError::DimensionMismatch(format!(
            "oracle dimension {n}, point {}, gradient {}",
            w.len(),
            estimates.mean_gradient.len()
        )));
    }
    let prior = estimates.prior()?;
    let noise = estimates.noise()?;
    let start = Instant::now();

    let mut posterior = PosteriorMean::prior_only(prior);
    let mut observations = ObservationSet::new(n);
    let mut log = Vec::with_capacity(config.iterations);
    let mut r = estimates.mean_gradient.clone();
    let mut completed = 0;

    for iteration in 1..=config.iterations {
        let probe = next_direction(&posterior, &r, config.normalize_probes)?;
        let batch = oracle.sample_batch();
        let y = oracle.batch_hvp(w, &probe.direction, &batch);
        r = oracle.batch_gradient(w, &batch);

        let mut candidate = observations.clone();
        candidate.push_with_noise(probe.direction, y, &noise)?;
        match infer(&prior, &noise, &candidate) {
            Ok(p) => {
                posterior = p;
                observations = candidate;
                completed = iteration;
            }
            Err(e) => {
                warn!("inference failed at iteration {iteration} ({e}); keeping the previous estimate");
                log.push(IterationRecord {
                    iteration,
                    probe_norm: probe.raw_norm,
                    data_read: oracle.data_read(),
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                });
                break;
            }
        }
        log.push(IterationRecord {
            iteration,
            probe_norm: probe.raw_norm,
            data_read: oracle.data_read(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }

    Ok(InferenceRun {
        posterior,
        observations,
        log,
        completed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ExactQuadratic;
    use ndarray::{array, Array2};

    #[test]
    fn scaled_identity_quadratic_estimates() {
        let mut oracle = ExactQuadratic::new(Array2::eye(3) * 4.0, array![1.0, -2.0, 0.5], 8);
        let est = estimate_parameters(&mut oracle, &array![0.3, 0.1, 0.0], 4, EstimationMode::Full)
            .unwrap();
        assert!((est.b0 - 2.0).abs() < 1e-14);
        assert!((est.w0 - 4.0).abs() < 1e-14);
        assert_eq!(est.lambda0, 0.0);
        assert_eq!(oracle.data_read(), 32);
    }

    #[test]
    fn scalar_mode_uses_inverse_rayleigh_step() {
        let b = array![[1.0, 0.0], [0.0, 100.0]];
        // gradient at w = 0 is −b_vec; choose it along (1,1)/√2
        let rhs = array![-1.0, -1.0] / 2f64.sqrt();
        let mut oracle = ExactQuadratic::new(b, rhs, 1);
        let est = estimate_parameters(&mut oracle, &Array1::zeros(2), 2, EstimationMode::Scalar)
            .unwrap();
        assert!((1.0 / est.b0 - 101.0 / 10001.0).abs() < 1e-15);
        assert_eq!(est.lambda0, 0.0);
    }

    #[test]
    fn negative_curvature_aborts() {
        let mut oracle = ExactQuadratic::new(-Array2::<f64>::eye(2), array![1.0, 0.0], 1);
        let err = estimate_parameters(&mut oracle, &Array1::zeros(2), 3, EstimationMode::Full)
            .unwrap_err();
        assert!(matches!(err, SolverError::NonPositiveCurvature { .. }));
    }

    #[test]
    fn zero_gradient_aborts() {
        let mut oracle = ExactQuadratic::new(Array2::eye(2), array![1.0, 1.0], 1);
        let err = estimate_parameters(&mut oracle, &array![1.0, 1.0], 3, EstimationMode::Full)
            .unwrap_err();
        assert_eq!(err, SolverError::ZeroGradient);
    }

    #[test]
    fn too_few_init_samples_rejected() {
        let mut oracle = ExactQuadratic::new(Array2::eye(2), array![1.0, 1.0], 1);
        assert!(estimate_parameters(&mut oracle, &Array1::zeros(2), 1, EstimationMode::Full).is_err());
    }

    #[test]
    fn prior_only_direction_is_scaled_negative_residual() {
        let post = PosteriorMean::prior_only(MatrixPrior::new(4.0, 1.0, 3).unwrap());
        let r = array![1.0, 2.0, -2.0];
        let p = next_direction(&post, &r, false).unwrap();
        assert_eq!(p.direction, array![-0.25, -0.5, 0.5]);
        let q = next_direction(&post, &r, true).unwrap();
        assert!((q.direction.dot(&q.direction) - 1.0).abs() < 1e-15);
        assert!((q.raw_norm - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_is_degenerate() {
        let post = PosteriorMean::prior_only(MatrixPrior::new(1.0, 1.0, 2).unwrap());
        assert_eq!(
            next_direction(&post, &Array1::zeros(2), true).unwrap_err(),
            SolverError::DegenerateResidual
        );
    }

    #[test]
    fn single_iteration_interpolates() {
        let b = array![[3.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        let mut oracle = ExactQuadratic::new(b.clone(), array![1.0, 0.0, 1.0], 4);
        let w = Array1::zeros(3);
        let est = estimate_parameters(&mut oracle, &w, 2, EstimationMode::Full).unwrap();
        let cfg = SolverConfig {
            iterations: 1,
            ..SolverConfig::default()
        };
        let run = run_inference(&mut oracle, &w, &est, &cfg).unwrap();
        let s1 = run.observations.probes().column(0).to_owned();
        let y1 = run.observations.products().column(0).to_owned();
        let fit = run.posterior.apply(&s1).unwrap();
        for (a, b) in fit.iter().zip(y1.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(run.log.len(), 1);
        // two init batches plus one per iteration
        assert_eq!(oracle.data_read(), 12);
    }
}
