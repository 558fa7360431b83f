use std::sync::OnceLock;

use ndarray::Array1;

use super::config::{ProblemKind, ProblemSpec};
use super::HarnessError;
use crate::active::HessianOracle;
use crate::problems::{
    batch_oracle, exact_solution, logistic_oracle, newton_solve, Dataset, HvpMode, LogisticProblem,
    MlpOracle, QuadraticProblem, ToyNet,
};

#[derive(Debug, Clone)]
pub enum ProblemInstance {
    Quadratic(QuadraticProblem),
    Logistic(LogisticProblem),
    Mlp(ToyNet),
}

/// A materialised problem plus its lazily computed optimum.
#[derive(Debug)]
pub struct BuiltProblem {
    pub spec: ProblemSpec,
    pub instance: ProblemInstance,
    optimum: OnceLock<Option<(Array1<f64>, f64)>>,
}

/// Held-out loss and accuracy, where the problem defines them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TestMetrics {
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
}

impl BuiltProblem {
    pub fn build(spec: &ProblemSpec) -> Result<Self, HarnessError> {
        let load = |path: &Option<std::path::PathBuf>, dim: usize| -> Result<Option<Dataset>, HarnessError> {
            path.as_ref()
                .map(|p| Dataset::read_csv(p, dim).map_err(HarnessError::from))
                .transpose()
        };
        let instance = match &spec.kind {
            ProblemKind::Regression(r) => {
                let test = load(&spec.test_csv, r.input_dim)?;
                match load(&spec.train_csv, r.input_dim)? {
                    Some(train) => ProblemInstance::Quadratic(r.build_from(&train, test.as_ref())?),
                    None => ProblemInstance::Quadratic(r.build()?),
                }
            }
            ProblemKind::Logistic(c) => {
                let test = load(&spec.test_csv, c.input_dim)?;
                match load(&spec.train_csv, c.input_dim)? {
                    Some(train) => {
                        ProblemInstance::Logistic(LogisticProblem::from_dataset(&train, test.as_ref(), c.reg)?)
                    }
                    None => ProblemInstance::Logistic(c.build()?),
                }
            }
            ProblemKind::Mlp(m) => {
                let test = load(&spec.test_csv, m.input_dim)?;
                match load(&spec.train_csv, m.input_dim)? {
                    Some(train) => ProblemInstance::Mlp(m.build_from(&train, test.as_ref())?),
                    None => ProblemInstance::Mlp(m.build()?),
                }
            }
        };
        Ok(Self::from_instance(spec.clone(), instance))
    }

    pub fn from_instance(spec: ProblemSpec, instance: ProblemInstance) -> Self {
        Self {
            spec,
            instance,
            optimum: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.instance {
            ProblemInstance::Quadratic(p) => p.dim(),
            ProblemInstance::Logistic(p) => p.dim(),
            ProblemInstance::Mlp(p) => p.dim(),
        }
    }

    pub fn n_data(&self) -> usize {
        match &self.instance {
            ProblemInstance::Quadratic(p) => p.n_data(),
            ProblemInstance::Logistic(p) => p.n_data(),
            ProblemInstance::Mlp(p) => p.n_data(),
        }
    }

    pub fn train_loss(&self, w: &Array1<f64>) -> f64 {
        match &self.instance {
            ProblemInstance::Quadratic(p) => p.loss(w),
            ProblemInstance::Logistic(p) => p.loss(w),
            ProblemInstance::Mlp(p) => p.loss(w),
        }
    }

    pub fn test_metrics(&self, w: &Array1<f64>) -> TestMetrics {
        match &self.instance {
            ProblemInstance::Quadratic(p) => TestMetrics {
                loss: p.test_loss(w),
                accuracy: None,
            },
            ProblemInstance::Logistic(p) => p
                .test_metrics(w)
                .map(|(loss, acc)| TestMetrics {
                    loss: Some(loss),
                    accuracy: Some(acc),
                })
                .unwrap_or_default(),
            ProblemInstance::Mlp(p) => p
                .test_metrics(w)
                .map(|(loss, acc)| TestMetrics {
                    loss: Some(loss),
                    accuracy: acc,
                })
                .unwrap_or_default(),
        }
    }

    /// Origin for the convex problems, a seeded random draw for the network.
    pub fn initial_point(&self, seed: u64) -> Array1<f64> {
        match &self.instance {
            ProblemInstance::Mlp(p) => p.initial_point(seed),
            _ => Array1::zeros(self.dim()),
        }
    }

    pub fn oracle(
        &self,
        batch_size: usize,
        seed: u64,
        mode: HvpMode,
    ) -> Result<Box<dyn HessianOracle + Send + '_>, HarnessError> {
        Ok(match &self.instance {
            ProblemInstance::Quadratic(p) => Box::new(batch_oracle(p, batch_size, seed)?),
            ProblemInstance::Logistic(p) => Box::new(logistic_oracle(p, batch_size, seed)?),
            ProblemInstance::Mlp(p) => Box::new(MlpOracle::new(p, batch_size, seed, mode)?),
        })
    }

    /// Exact minimiser and its loss (convex problems only), computed once.
    pub fn optimum(&self) -> Option<&(Array1<f64>, f64)> {
        self.optimum
            .get_or_init(|| {
                let w = match &self.instance {
                    ProblemInstance::Quadratic(p) => exact_solution(p).ok()?,
                    ProblemInstance::Logistic(p) => newton_solve(p, 1e-10, 100).ok()?,
                    ProblemInstance::Mlp(_) => return None,
                };
                let loss = self.train_loss(&w);
                Some((w, loss))
            })
            .as_ref()
    }

    pub fn quadratic(&self) -> Option<&QuadraticProblem> {
        match &self.instance {
            ProblemInstance::Quadratic(p) => Some(p),
            _ => None,
        }
    }
}
