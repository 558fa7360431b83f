use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::active::{EstimationMode, SolverConfig};
use crate::problems::{ClassificationSpec, HvpMode, MlpSpec, RegressionSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemKind {
    Regression(RegressionSpec),
    Logistic(ClassificationSpec),
    Mlp(MlpSpec),
}

/// Which problem to build. CSV paths, when given, replace the synthetic
/// data (the spec still supplies feature map, regulariser and architecture).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(flatten)]
    pub kind: ProblemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_csv: Option<PathBuf>,
}

impl ProblemSpec {
    pub fn synthetic(kind: ProblemKind) -> Self {
        Self {
            kind,
            train_csv: None,
            test_csv: None,
        }
    }
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self::synthetic(ProblemKind::Regression(RegressionSpec::default()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
    PrecondSgd,
    AvgInv,
    Cg,
    NewtonOracle,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::PrecondSgd => "precond_sgd",
            Optimizer::AvgInv => "avg_inv",
            Optimizer::Cg => "cg",
            Optimizer::NewtonOracle => "newton_oracle",
        }
    }
}

impl std::str::FromStr for Optimizer {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| HarnessError::Config(format!("unknown optimizer {s:?}")))
    }
}

/// Active solver and pre-conditioner settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Solver iterations `m`.
    pub iterations: usize,
    pub init_samples: usize,
    /// Retained rank `k`; `None` means `min(m, 16)` in full mode.
    pub rank: Option<usize>,
    pub beta: f64,
    pub mode: EstimationMode,
    pub normalize_probes: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            iterations: 16,
            init_samples: 5,
            rank: None,
            beta: 1.0,
            mode: EstimationMode::Full,
            normalize_probes: true,
        }
    }
}

impl SolverSettings {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            iterations: self.iterations,
            init_samples: self.init_samples,
            normalize_probes: self.normalize_probes,
            mode: self.mode,
        }
    }

    pub fn effective_rank(&self) -> usize {
        self.rank.unwrap_or(self.iterations.min(16))
    }
}

/// One optimizer run on one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Free-form run name used in comparison output; defaults to the optimizer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub problem: ProblemSpec,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub solver: SolverSettings,
    pub learning_rate: f64,
    /// Optimizer steps (batches for avg-inv, iterations for CG).
    pub steps: usize,
    /// Overrides `steps` with whole passes over the training set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// Stop once this many samples have been read.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_data_read: Option<u64>,
    /// Scalar mode: epochs between step-length re-estimates.
    pub rebuild_every: usize,
    /// Scalar mode: keep `learning_rate` for the first epoch.
    pub warmup: bool,
    pub hvp_mode: HvpMode,
    pub record_every: usize,
    pub seed: u64,
    /// Relative train-loss suboptimality for the comparison summary.
    pub target: f64,
    /// End the run at the first record that meets `target` (problems with a
    /// known optimum only).
    pub stop_at_target: bool,
    /// Write measured wall-clock times; otherwise `wall_ms` is 0 so output
    /// is byte-reproducible.
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            label: None,
            problem: ProblemSpec::default(),
            optimizer: Optimizer::Sgd,
            batch_size: 256,
            solver: SolverSettings::default(),
            learning_rate: 0.1,
            steps: 1_000,
            epochs: None,
            max_data_read: None,
            rebuild_every: 1,
            warmup: true,
            hvp_mode: HvpMode::Full,
            record_every: 10,
            seed: 0,
            target: 1e-2,
            stop_at_target: false,
            timing: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.optimizer.name().to_string())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.steps == 0 && self.epochs.is_none() {
            return bad("steps must be positive");
        }
        if self.epochs == Some(0) {
            return bad("epochs must be positive");
        }
        if self.max_data_read == Some(0) {
            return bad("max_data_read must be positive");
        }
        if self.record_every == 0 {
            return bad("record_every must be positive");
        }
        if self.rebuild_every == 0 {
            return bad("rebuild_every must be positive");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.target > 0.0) {
            return bad("target must be positive");
        }
        if !(self.solver.beta > 0.0) {
            return bad("solver.beta must be positive");
        }
        if self.optimizer == Optimizer::PrecondSgd {
            self.solver
                .solver_config()
                .validate()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            if self.solver.effective_rank() == 0 {
                return bad("solver.rank must be positive");
            }
        }
        Ok(())
    }

    pub fn total_steps(&self, n_data: usize) -> usize {
        match self.epochs {
            Some(e) => e * self.steps_per_epoch(n_data),
            None => self.steps,
        }
    }

    pub fn steps_per_epoch(&self, n_data: usize) -> usize {
        n_data.div_ceil(self.batch_size).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_json_uses_defaults() {
        let c = ExperimentConfig::from_json(r#"{"problem": {"kind": "logistic", "input_dim": 5}}"#).unwrap();
        assert_eq!(c.batch_size, 256);
        assert_eq!(c.solver.iterations, 16);
        match c.problem.kind {
            ProblemKind::Logistic(s) => assert_eq!(s.input_dim, 5),
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn round_trip_and_rejections() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        assert!(ExperimentConfig::from_json(r#"{"batch_size": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"optimizer": "adam"}"#).is_err());
        assert_eq!("precond-sgd".parse::<Optimizer>().unwrap(), Optimizer::PrecondSgd);
    }
}
