//! L2-regularised logistic regression with labels in {−1, +1}.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::data::{two_gaussians, Dataset};
use super::sampler::{mix_seed, BatchSampler};
use super::ProblemError;
use crate::active::{Batch, HessianOracle};
use crate::linalg::{cholesky, solve_lower, solve_lower_transpose};

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eᶻ)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `L(w) = λ/2·‖w‖² + 1/|D|·Σ log(1 + exp(−yᵢ xᵢᵀw))`.
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    inputs: Array2<f64>,
    labels: Array1<f64>,
    reg: f64,
    test: Option<(Array2<f64>, Array1<f64>)>,
}

impl LogisticProblem {
    pub fn new(inputs: Array2<f64>, labels: Array1<f64>, reg: f64) -> Result<Self, ProblemError> {
        if !(reg > 0.0) || !reg.is_finite() {
            return Err(ProblemError::InvalidParameter(format!(
                "regulariser must be positive, got {reg}"
            )));
        }
        check_labels(&inputs, &labels)?;
        Ok(Self {
            inputs,
            labels,
            reg,
            test: None,
        })
    }

    pub fn with_test(mut self, inputs: Array2<f64>, labels: Array1<f64>) -> Result<Self, ProblemError> {
        check_labels(&inputs, &labels)?;
        if inputs.ncols() != self.dim() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.dim(),
                got: inputs.ncols(),
            });
        }
        self.test = Some((inputs, labels));
        Ok(self)
    }

    /// Maps a dataset's first target column to ±1: values > 0 become +1.
    pub fn from_dataset(train: &Dataset, test: Option<&Dataset>, reg: f64) -> Result<Self, ProblemError> {
        let to_pm = |d: &Dataset| d.target().mapv(|v| if v > 0.0 { 1.0 } else { -1.0 });
        let p = Self::new(train.inputs.clone(), to_pm(train), reg)?;
        match test {
            Some(t) => p.with_test(t.inputs.clone(), to_pm(t)),
            None => Ok(p),
        }
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn n_data(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn loss(&self, w: &Array1<f64>) -> f64 {
        let z = self.inputs.dot(w);
        let data: f64 = z
            .iter()
            .zip(&self.labels)
            .map(|(&z, &y)| softplus(-y * z))
            .sum::<f64>()
            / self.n_data() as f64;
        0.5 * self.reg * w.dot(w) + data
    }

    pub fn gradient(&self, w: &Array1<f64>) -> Array1<f64> {
        let all: Vec<usize> = (0..self.n_data()).collect();
        self.batch_gradient(w, &all)
    }

    pub fn batch_gradient(&self, w: &Array1<f64>, indices: &[usize]) -> Array1<f64> {
        let mut g = Array1::<f64>::zeros(self.dim());
        for &i in indices {
            let x = self.inputs.row(i);
            let y = self.labels[i];
            g.scaled_add(-y * sigmoid(-y * x.dot(w)), &x);
        }
        g /= indices.len().max(1) as f64;
        g.scaled_add(self.reg, w);
        g
    }

    pub fn batch_hvp(&self, w: &Array1<f64>, s: &Array1<f64>, indices: &[usize]) -> Array1<f64> {
        let mut out = Array1::<f64>::zeros(self.dim());
        for &i in indices {
            let x = self.inputs.row(i);
            let p = sigmoid(x.dot(w));
            out.scaled_add(p * (1.0 - p) * x.dot(s), &x);
        }
        out /= indices.len().max(1) as f64;
        out.scaled_add(self.reg, s);
        out
    }

    pub fn hessian(&self, w: &Array1<f64>) -> Array2<f64> {
        let z = self.inputs.dot(w);
        let weights = z.mapv(|z| {
            let p = sigmoid(z);
            p * (1.0 - p)
        });
        let weighted = &self.inputs * &weights.insert_axis(Axis(1));
        let mut h = self.inputs.t().dot(&weighted) / self.n_data() as f64;
        for i in 0..h.nrows() {
            h[[i, i]] += self.reg;
        }
        h
    }

    /// Mean negative log-likelihood and accuracy on the held-out set.
    pub fn test_metrics(&self, w: &Array1<f64>) -> Option<(f64, f64)> {
        self.test.as_ref().map(|(x, y)| {
            let z = x.dot(w);
            let n = y.len() as f64;
            let nll = z.iter().zip(y).map(|(&z, &y)| softplus(-y * z)).sum::<f64>() / n;
            let hits = z.iter().zip(y).filter(|(&z, &y)| z * y > 0.0).count() as f64;
            (nll, hits / n)
        })
    }
}

fn check_labels(inputs: &Array2<f64>, labels: &Array1<f64>) -> Result<(), ProblemError> {
    if inputs.nrows() != labels.len() || labels.is_empty() {
        return Err(ProblemError::InvalidData(format!(
            "{} input rows and {} labels",
            inputs.nrows(),
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(ProblemError::InvalidData("labels must be -1 or +1".into()));
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(ProblemError::InvalidData("non-finite input".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LogisticOracle<'a> {
    problem: &'a LogisticProblem,
    sampler: BatchSampler,
}

pub fn logistic_oracle(
    problem: &LogisticProblem,
    batch_size: usize,
    seed: u64,
) -> Result<LogisticOracle<'_>, ProblemError> {
    if batch_size == 0 || batch_size > problem.n_data() {
        return Err(ProblemError::InvalidParameter(format!(
            "batch size {batch_size} outside 1..={}",
            problem.n_data()
        )));
    }
    Ok(LogisticOracle {
        problem,
        sampler: BatchSampler::new(problem.n_data(), batch_size, seed),
    })
}

impl HessianOracle for LogisticOracle<'_> {
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

    fn batch_hvp(&self, w: &Array1<f64>, s: &Array1<f64>, batch: &Batch) -> Array1<f64> {
        self.problem.batch_hvp(w, s, &batch.indices)
    }
}

/// Full-batch damped Newton from the origin until `‖∇L‖ ≤ tol`.
pub fn newton_solve(problem: &LogisticProblem, tol: f64, max_iter: usize) -> Result<Array1<f64>, ProblemError> {
    let mut w = Array1::<f64>::zeros(problem.dim());
    let mut loss = problem.loss(&w);
    for _ in 0..max_iter {
        let g = problem.gradient(&w);
        if g.dot(&g).sqrt() <= tol {
            return Ok(w);
        }
        let l = cholesky(&problem.hessian(&w))?;
        let col = g.clone().insert_axis(Axis(1));
        let dir = solve_lower_transpose(&l, &solve_lower(&l, &col)).column(0).to_owned();
        let slope = g.dot(&dir);
        let mut t = 1.0;
        loop {
            let cand = &w - &(&dir * t);
            let cand_loss = problem.loss(&cand);
            if cand_loss <= loss - 1e-4 * t * slope || t < 1e-10 {
                w = cand;
                loss = cand_loss;
                break;
            }
            t *= 0.5;
        }
    }
    let g = problem.gradient(&w);
    if g.dot(&g).sqrt() <= tol {
        Ok(w)
    } else {
        Err(ProblemError::InvalidData(format!(
            "Newton did not reach gradient norm {tol:.1e} in {max_iter} iterations"
        )))
    }
}

/// Synthetic stand-in for a two-digit image classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassificationSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub input_dim: usize,
    pub separation: f64,
    pub reg: f64,
    pub seed: u64,
}

impl Default for ClassificationSpec {
    fn default() -> Self {
        Self {
            n_train: 4_000,
            n_test: 1_000,
            input_dim: 784,
            separation: 3.0,
            reg: 1e-3,
            seed: 0,
        }
    }
}

impl ClassificationSpec {
    pub fn generate(&self) -> (Dataset, Dataset) {
        let seed = mix_seed(self.seed);
        let all = two_gaussians(self.n_train + self.n_test, self.input_dim, self.separation, seed);
        let split = |lo: usize, hi: usize| Dataset {
            inputs: all.inputs.slice(ndarray::s![lo..hi, ..]).to_owned(),
            targets: all.targets.slice(ndarray::s![lo..hi, ..]).to_owned(),
        };
        (split(0, self.n_train), split(self.n_train, self.n_train + self.n_test))
    }

    pub fn build(&self) -> Result<LogisticProblem, ProblemError> {
        let (train, test) = self.generate();
        LogisticProblem::from_dataset(&train, Some(&test), self.reg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn stable_link_functions() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_data_gives_regulariser_only() {
        let p = LogisticProblem::new(Array2::zeros((4, 3)), array![1.0, -1.0, 1.0, -1.0], 0.7).unwrap();
        let s = array![1.0, 2.0, -3.0];
        let hv = p.batch_hvp(&array![0.3, 0.1, 0.0], &s, &[0, 1, 2, 3]);
        assert_eq!(hv, &s * 0.7);
    }

    #[test]
    fn rejects_bad_labels() {
        assert!(LogisticProblem::new(Array2::zeros((2, 1)), array![0.0, 1.0], 1.0).is_err());
        assert!(LogisticProblem::new(Array2::zeros((2, 1)), array![1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn newton_reaches_tolerance() {
        let spec = ClassificationSpec {
            n_train: 200,
            n_test: 50,
            input_dim: 5,
            ..ClassificationSpec::default()
        };
        let p = spec.build().unwrap();
        let w = newton_solve(&p, 1e-10, 50).unwrap();
        assert!(p.gradient(&w).dot(&p.gradient(&w)).sqrt() <= 1e-10);
        let (_, acc) = p.test_metrics(&w).unwrap();
        assert!(acc > 0.8);
    }
}
