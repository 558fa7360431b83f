//! Regularised least-squares regression: a quadratic with Hessian
//! `B = ΦΦᵀ/|D| + α·I` whose mini-batch Hessians are low-rank plus identity.

use log::warn;
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{normal_matrix, Dataset};
use super::features::{feature_matrix, FeatureMapSpec};
use super::sampler::{mix_seed, BatchSampler};
use super::ProblemError;
use crate::active::{Batch, HessianOracle};
use crate::linalg::{cholesky, solve_lower, solve_lower_transpose, woodbury_solve, LowRankFactorPair};

/// `L(w) = α/2·‖w‖² + 1/(2|D|)·‖Φᵀw − y‖²`, so that `∇²L = ΦΦᵀ/|D| + α·I`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    /// Φᵀ: one feature vector per row.
    features: Array2<f64>,
    targets: Array1<f64>,
    alpha_reg: f64,
    hessian: Array2<f64>,
    rhs: Array1<f64>,
    offset: f64,
    /// Held-out loss as a quadratic form `(XᵀX/n, Xᵀy/n, ‖y‖²/2n)`.
    test: Option<(Array2<f64>, Array1<f64>, f64)>,
}

impl QuadraticProblem {
    pub fn new(
        features: Array2<f64>,
        targets: Array1<f64>,
        alpha_reg: f64,
    ) -> Result<Self, ProblemError> {
        if !(alpha_reg > 0.0) || !alpha_reg.is_finite() {
            return Err(ProblemError::InvalidParameter(format!(
                "regulariser must be positive, got {alpha_reg}"
            )));
        }
        if features.nrows() != targets.len() || features.nrows() == 0 {
            return Err(ProblemError::InvalidData(format!(
                "{} feature rows and {} targets",
                features.nrows(),
                targets.len()
            )));
        }
        if features.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(ProblemError::InvalidData("non-finite value".into()));
        }
        let d = features.nrows() as f64;
        let mut hessian = features.t().dot(&features) / d;
        for i in 0..hessian.nrows() {
            hessian[[i, i]] += alpha_reg;
        }
        let rhs = features.t().dot(&targets) / d;
        let offset = targets.dot(&targets) / (2.0 * d);
        Ok(Self {
            features,
            targets,
            alpha_reg,
            hessian,
            rhs,
            offset,
            test: None,
        })
    }

    pub fn with_test(mut self, features: Array2<f64>, targets: Array1<f64>) -> Result<Self, ProblemError> {
        if features.ncols() != self.dim() || features.nrows() != targets.len() {
            return Err(ProblemError::InvalidData("test set shape does not match".into()));
        }
        let n = targets.len() as f64;
        let gram = features.t().dot(&features) / n;
        let rhs = features.t().dot(&targets) / n;
        self.test = Some((gram, rhs, targets.dot(&targets) / (2.0 * n)));
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_data(&self) -> usize {
        self.features.nrows()
    }

    pub fn alpha_reg(&self) -> f64 {
        self.alpha_reg
    }

    pub fn hessian(&self) -> &Array2<f64> {
        &self.hessian
    }

    /// `Φy/|D|`, the negated gradient at the origin.
    pub fn rhs(&self) -> &Array1<f64> {
        &self.rhs
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn targets(&self) -> &Array1<f64> {
        &self.targets
    }

    /// Full-data loss from the precomputed quadratic form, O(N²).
    pub fn loss(&self, w: &Array1<f64>) -> f64 {
        0.5 * w.dot(&self.hessian.dot(w)) - self.rhs.dot(w) + self.offset
    }

    pub fn gradient(&self, w: &Array1<f64>) -> Array1<f64> {
        self.hessian.dot(w) - &self.rhs
    }

    /// Half mean squared error on the held-out set, O(N²).
    pub fn test_loss(&self, w: &Array1<f64>) -> Option<f64> {
        self.test
            .as_ref()
            .map(|(gram, rhs, offset)| (0.5 * w.dot(&gram.dot(w)) - rhs.dot(w) + offset).max(0.0))
    }

    pub fn batch_gradient(&self, w: &Array1<f64>, indices: &[usize]) -> Array1<f64> {
        let mut g = Array1::<f64>::zeros(self.dim());
        for &i in indices {
            let phi = self.features.row(i);
            let r = phi.dot(w) - self.targets[i];
            g.scaled_add(r, &phi);
        }
        g /= indices.len() as f64;
        g.scaled_add(self.alpha_reg, w);
        g
    }

    /// `B̃·s = α·s + 1/|B|·Σ φ_b(φ_bᵀs)`, O(|B|·N).
    pub fn batch_hvp(&self, s: &Array1<f64>, indices: &[usize]) -> Array1<f64> {
        let mut out = Array1::<f64>::zeros(self.dim());
        for &i in indices {
            let phi = self.features.row(i);
            out.scaled_add(phi.dot(s), &phi);
        }
        out /= indices.len() as f64;
        out.scaled_add(self.alpha_reg, s);
        out
    }

    /// Regularised least-squares fit on one batch, `B̃⁻¹·Φ_B·y_B/|B|`.
    ///
    /// Batches no larger than the feature dimension go through the
    /// `|B|×|B|` capacitance matrix of the low-rank form; larger ones are
    /// cheaper to factor directly in feature space.
    pub fn batch_solution(&self, indices: &[usize]) -> Result<Array1<f64>, ProblemError> {
        let nb = indices.len() as f64;
        let phi_b = self.features.select(Axis(0), indices);
        let y_b = self.targets.select(Axis(0), indices);
        let rhs = phi_b.t().dot(&y_b) / nb;
        if indices.len() <= self.dim() {
            let a = phi_b.t().to_owned() / nb;
            let c = phi_b.t().to_owned();
            let pair = LowRankFactorPair::new(a, c)?;
            Ok(woodbury_solve(self.alpha_reg, &pair, &rhs)?)
        } else {
            let mut h = phi_b.t().dot(&phi_b) / nb;
            for i in 0..h.nrows() {
                h[[i, i]] += self.alpha_reg;
            }
            let l = cholesky(&h)?;
            let col = rhs.insert_axis(Axis(1));
            let x = solve_lower_transpose(&l, &solve_lower(&l, &col));
            Ok(x.column(0).to_owned())
        }
    }
}

/// `w* = (ΦΦᵀ/|D| + α·I)⁻¹·Φy/|D|` by Cholesky.
pub fn exact_solution(problem: &QuadraticProblem) -> Result<Array1<f64>, ProblemError> {
    let l = cholesky(problem.hessian())?;
    let col = problem.rhs().clone().insert_axis(Axis(1));
    let x = solve_lower_transpose(&l, &solve_lower(&l, &col));
    Ok(x.column(0).to_owned())
}

/// Mini-batch gradients and Hessian-vector products of a [`QuadraticProblem`].
#[derive(Debug, Clone)]
pub struct QuadraticOracle<'a> {
    problem: &'a QuadraticProblem,
    sampler: BatchSampler,
}

pub fn batch_oracle(
    problem: &QuadraticProblem,
    batch_size: usize,
    seed: u64,
) -> Result<QuadraticOracle<'_>, ProblemError> {
    if batch_size == 0 || batch_size > problem.n_data() {
        return Err(ProblemError::InvalidParameter(format!(
            "batch size {batch_size} outside 1..={}",
            problem.n_data()
        )));
    }
    Ok(QuadraticOracle {
        problem,
        sampler: BatchSampler::new(problem.n_data(), batch_size, seed),
    })
}

impl HessianOracle for QuadraticOracle<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn batch_size(&self) -> usize {
        self.sampler.batch_size()
    }

    fn data_read(&self) -> u64 {
        self.sampler.data_read()
    }

    fn sample_batch(&mut self) -> Batch {
        self.sampler.sample()
    }

    fn batch_gradient(&self, w: &Array1<f64>, batch: &Batch) -> Array1<f64> {
        self.problem.batch_gradient(w, &batch.indices)
    }

    fn batch_hvp(&self, _w: &Array1<f64>, s: &Array1<f64>, batch: &Batch) -> Array1<f64> {
        self.problem.batch_hvp(s, &batch.indices)
    }
}

/// Running average of per-batch least-squares solutions.
#[derive(Debug, Clone)]
pub struct AvgInv<'a> {
    problem: &'a QuadraticProblem,
    sampler: BatchSampler,
    average: Array1<f64>,
    used: usize,
}

impl<'a> AvgInv<'a> {
    pub fn new(problem: &'a QuadraticProblem, batch_size: usize, seed: u64) -> Result<Self, ProblemError> {
        if batch_size == 0 || batch_size > problem.n_data() {
            return Err(ProblemError::InvalidParameter(format!(
                "batch size {batch_size} outside 1..={}",
                problem.n_data()
            )));
        }
        Ok(Self {
            problem,
            sampler: BatchSampler::new(problem.n_data(), batch_size, seed),
            average: Array1::zeros(problem.dim()),
            used: 0,
        })
    }

    /// Loads one batch and folds its solution into the average. Singular
    /// batches are skipped (their data still counts as read).
    pub fn step(&mut self) -> bool {
        let batch = self.sampler.sample();
        match self.problem.batch_solution(&batch.indices) {
            Ok(w) if w.iter().all(|v| v.is_finite()) => {
                self.used += 1;
                let k = self.used as f64;
                self.average.zip_mut_with(&w, |a, &x| *a += (x - *a) / k);
                true
            }
            Ok(_) => {
                warn!("batch solution is not finite; skipping batch");
                false
            }
            Err(e) => {
                warn!("skipping singular batch: {e}");
                false
            }
        }
    }

    pub fn estimate(&self) -> &Array1<f64> {
        &self.average
    }

    pub fn batches_used(&self) -> usize {
        self.used
    }

    pub fn data_read(&self) -> u64 {
        self.sampler.data_read()
    }
}

pub fn avg_inv_baseline(
    problem: &QuadraticProblem,
    batch_size: usize,
    n_batches: usize,
    seed: u64,
) -> Result<Array1<f64>, ProblemError> {
    if n_batches == 0 {
        return Err(ProblemError::InvalidParameter("n_batches must be at least 1".into()));
    }
    let mut avg = AvgInv::new(problem, batch_size, seed)?;
    for _ in 0..n_batches {
        avg.step();
    }
    if avg.batches_used() == 0 {
        return Err(ProblemError::InvalidData("every batch was singular".into()));
    }
    Ok(avg.estimate().clone())
}

/// Synthetic stand-in for a 21-input robot-dynamics regression set.
///
/// Inputs are Gaussian with a shared offset; targets are a fixed quadratic
/// response of the unscaled monomials, a quartic term outside the feature
/// span, and Gaussian noise. The offset and the feature map's log-uniform
/// scales make the least-squares Hessian ill-conditioned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub input_dim: usize,
    pub feature_dim: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub input_mean: f64,
    pub input_std: f64,
    pub noise_std: f64,
    /// Response coefficients on monomials are `N(0,1)·scale^response_decay`.
    pub response_decay: f64,
    /// Weight of a sum of pairwise products `(z_a² − 1)(z_b² − 1)/2` over the
    /// standardised inputs. Under Gaussian inputs it is orthogonal to every
    /// polynomial of degree ≤ 3, so the feature span cannot fit it, yet it
    /// correlates with products of features, which biases per-batch solves.
    pub nonlinearity: f64,
    pub alpha_reg: f64,
    pub seed: u64,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self {
            n_train: 44_484,
            n_test: 4_449,
            input_dim: 21,
            feature_dim: 253,
            scale_min: 1e-3,
            scale_max: 1.0,
            input_mean: 3.0,
            input_std: 0.5,
            noise_std: 0.1,
            response_decay: 3.0,
            nonlinearity: 1.0,
            alpha_reg: 1e-3,
            seed: 0,
        }
    }
}

impl RegressionSpec {
    pub fn feature_map(&self) -> Result<FeatureMapSpec, ProblemError> {
        FeatureMapSpec::log_uniform(self.input_dim, self.feature_dim, self.scale_min, self.scale_max)
    }

    /// Raw inputs and targets for the train and test splits.
    pub fn generate(&self) -> Result<(Dataset, Dataset), ProblemError> {
        let map = self.feature_map()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed));
        let coeffs = normal_matrix(&mut rng, map.output_dim(), 1).column(0).to_owned()
            * Array1::from_iter(map.scales.iter().map(|s| s.powf(self.response_decay)));
        let mut make = |rows: usize| -> Result<Dataset, ProblemError> {
            let x = normal_matrix(&mut rng, rows, self.input_dim) * self.input_std + self.input_mean;
            let unscaled = FeatureMapSpec {
                scales: vec![1.0; map.output_dim()],
                ..map.clone()
            };
            let m = feature_matrix(&x, &unscaled)?;
            let noise = normal_matrix(&mut rng, rows, 1) * self.noise_std;
            let bend = self.pairwise_term(&x);
            let y = (m.dot(&coeffs) + bend).insert_axis(Axis(1)) + noise;
            Dataset::new(x, y)
        };
        let train = make(self.n_train)?;
        let test = make(self.n_test)?;
        Ok((train, test))
    }

    /// `γ·Σ_{a<b} h(z_a)·h(z_b)/√(#pairs)` with `h(z) = (z² − 1)/√2` and `z`
    /// the standardised inputs; unit variance per unit weight.
    fn pairwise_term(&self, x: &Array2<f64>) -> Array1<f64> {
        let d = self.input_dim;
        let pairs = (d * d.saturating_sub(1) / 2).max(1) as f64;
        let h = x.mapv(|v| {
            let z = (v - self.input_mean) / self.input_std;
            (z * z - 1.0) / std::f64::consts::SQRT_2
        });
        let scale = self.nonlinearity / pairs.sqrt();
        Array1::from_iter(h.rows().into_iter().map(|r| {
            let sum = r.sum();
            let squares = r.dot(&r);
            scale * (sum * sum - squares) / 2.0
        }))
    }

    pub fn build(&self) -> Result<QuadraticProblem, ProblemError> {
        let (train, test) = self.generate()?;
        self.build_from(&train, Some(&test))
    }

    /// Applies the feature map to already loaded raw data.
    pub fn build_from(&self, train: &Dataset, test: Option<&Dataset>) -> Result<QuadraticProblem, ProblemError> {
        let map = self.feature_map()?;
        let problem = QuadraticProblem::new(feature_matrix(&train.inputs, &map)?, train.target(), self.alpha_reg)?;
        match test {
            Some(t) => problem.with_test(feature_matrix(&t.inputs, &map)?, t.target()),
            None => Ok(problem),
        }
    }
}
