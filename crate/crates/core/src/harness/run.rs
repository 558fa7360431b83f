use std::time::Instant;

use log::{info, warn};
use ndarray::Array1;

use super::compare::suboptimality;
use super::config::{ExperimentConfig, Optimizer};
use super::problem::BuiltProblem;
use super::record::RunRecord;
use super::HarnessError;
use crate::active::{estimate_parameters, run_inference, EstimationMode, HessianOracle, PriorEstimates};
use crate::precond::{build, reduce_rank, Preconditioner, ScalarStep};
use crate::problems::{cg_baseline, AvgInv};

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub label: String,
    pub optimizer: Optimizer,
    pub records: Vec<RunRecord>,
    /// A loss or iterate became non-finite or blew up past
    /// `BLOW_UP`×the initial loss (or, for CG, the loss went up); the run
    /// stopped there.
    pub diverged: bool,
    pub final_w: Array1<f64>,
    /// Samples read while building the pre-conditioner.
    pub construction_data_read: Option<u64>,
    /// The pre-conditioned run had to fall back to plain SGD.
    pub fell_back: bool,
    pub estimates: Option<PriorEstimates>,
}

impl RunOutcome {
    fn new(config: &ExperimentConfig, w: Array1<f64>) -> Self {
        Self {
            label: config.label(),
            optimizer: config.optimizer,
            records: Vec::new(),
            diverged: false,
            final_w: w,
            construction_data_read: None,
            fell_back: false,
            estimates: None,
        }
    }

    pub fn final_record(&self) -> Option<&RunRecord> {
        self.records.last()
    }
}

struct Recorder<'a> {
    problem: &'a BuiltProblem,
    start: Option<Instant>,
}

impl<'a> Recorder<'a> {
    fn new(problem: &'a BuiltProblem, timing: bool) -> Self {
        Self {
            problem,
            start: timing.then(Instant::now),
        }
    }

    fn make(&self, step: usize, data_read: u64, w: &Array1<f64>, step_length: f64) -> RunRecord {
        let train_loss = self.problem.train_loss(w);
        let (test_loss, test_accuracy) = if train_loss.is_finite() {
            let m = self.problem.test_metrics(w);
            (m.loss, m.accuracy)
        } else {
            (None, None)
        };
        RunRecord {
            step,
            data_read,
            train_loss,
            test_loss,
            test_accuracy,
            step_length,
            wall_ms: self.start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3),
        }
    }
}

/// Builds the problem and runs the configured optimizer.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    let problem = BuiltProblem::build(&config.problem)?;
    run_on(&problem, config)
}

/// Runs the configured optimizer on an already built problem.
pub fn run_on(problem: &BuiltProblem, config: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    config.validate()?;
    if problem.spec != config.problem {
        return Err(HarnessError::Config("config describes a different problem".into()));
    }
    match config.optimizer {
        Optimizer::Sgd => run_sgd(problem, config),
        Optimizer::PrecondSgd => run_precond_sgd(problem, config),
        Optimizer::AvgInv | Optimizer::Cg | Optimizer::NewtonOracle => run_baseline(problem, config),
    }
}

/// Growth of the train loss over its initial value treated as divergence.
const BLOW_UP: f64 = 1e10;

/// Whether `record` ends the run early because it meets the target.
fn reached(problem: &BuiltProblem, config: &ExperimentConfig, record: &RunRecord) -> bool {
    config.stop_at_target
        && problem
            .optimum()
            .is_some_and(|(_, opt)| suboptimality(record.train_loss, *opt) <= config.target)
}

/// Shared SGD loop: `w ← w − update(g)`, recording every `record_every`
/// steps, at epoch boundaries and at the end.
fn descend<'o, F>(
    problem: &BuiltProblem,
    config: &ExperimentConfig,
    oracle: &mut (dyn HessianOracle + Send + 'o),
    outcome: &mut RunOutcome,
    initial_length: f64,
    mut update: F,
) where
    F: FnMut(&mut (dyn HessianOracle + Send + 'o), usize, &Array1<f64>, &Array1<f64>) -> (Array1<f64>, f64),
{
    let rec = Recorder::new(problem, config.timing);
    let n = problem.n_data();
    let total = config.total_steps(n);
    let per_epoch = config.steps_per_epoch(n);
    let mut w = outcome.final_w.clone();
    let first = rec.make(0, oracle.data_read(), &w, initial_length);
    let ceiling = BLOW_UP * first.train_loss.abs().max(f64::MIN_POSITIVE);
    let done = reached(problem, config, &first);
    outcome.records.push(first);
    if done {
        return;
    }
    let mut length = initial_length;
    let mut last_recorded = 0;
    let mut step = 0;
    while step < total {
        if let Some(max) = config.max_data_read {
            if oracle.data_read() + oracle.batch_size() as u64 > max {
                break;
            }
        }
        step += 1;
        let g = oracle.noisy_gradient(&w);
        let (delta, l) = update(oracle, step, &w, &g);
        length = l;
        w -= &delta;
        let finite = w.iter().all(|v| v.is_finite());
        if finite && !(step % config.record_every == 0 || step % per_epoch == 0 || step == total) {
            continue;
        }
        let r = rec.make(step, oracle.data_read(), &w, length);
        let ok = finite && r.train_loss.is_finite() && r.train_loss <= ceiling;
        let done = ok && reached(problem, config, &r);
        outcome.records.push(r);
        last_recorded = step;
        if !ok {
            warn!("{}: loss diverged at step {step}; stopping", outcome.label);
            outcome.diverged = true;
            break;
        }
        if done {
            break;
        }
    }
    if last_recorded != step {
        outcome.records.push(rec.make(step, oracle.data_read(), &w, length));
    }
    outcome.final_w = w;
}

/// Plain SGD with a constant learning rate.
pub fn run_sgd(problem: &BuiltProblem, config: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    let mut oracle = problem.oracle(config.batch_size, config.seed, config.hvp_mode)?;
    let mut outcome = RunOutcome::new(config, problem.initial_point(config.seed));
    let eta = config.learning_rate;
    descend(problem, config, oracle.as_mut(), &mut outcome, eta, |_, _, _, g| (g * eta, eta));
    Ok(outcome)
}

/// Estimates the prior, runs the active solver at `w` and builds `P`.
pub fn build_preconditioner<O: HessianOracle + ?Sized>(
    oracle: &mut O,
    w: &Array1<f64>,
    config: &ExperimentConfig,
) -> Result<(Preconditioner, PriorEstimates), HarnessError> {
    let settings = &config.solver;
    let estimates = estimate_parameters(oracle, w, settings.init_samples, EstimationMode::Full)?;
    let solver = settings.solver_config();
    let inference = run_inference(oracle, w, &estimates, &solver)?;
    let rank = settings.effective_rank().min(inference.posterior.rank());
    if rank == 0 {
        return Err(HarnessError::Config("solver produced no observations".into()));
    }
    let spectral = reduce_rank(&inference.posterior, rank)?;
    let (p, _) = build(spectral, settings.beta, config.learning_rate)?;
    Ok((p, estimates))
}

/// Pre-conditioned SGD `w ← w − η·P²·g`, or in scalar mode SGD whose step
/// length is re-estimated as `1/b0` every `rebuild_every` epochs.
pub fn run_precond_sgd(problem: &BuiltProblem, config: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    if config.optimizer != Optimizer::PrecondSgd {
        return Err(HarnessError::Config("run_precond_sgd needs optimizer precond_sgd".into()));
    }
    let mut oracle = problem.oracle(config.batch_size, config.seed, config.hvp_mode)?;
    let mut outcome = RunOutcome::new(config, problem.initial_point(config.seed));
    let eta = config.learning_rate;
    match config.solver.mode {
        EstimationMode::Full => {
            let w0 = outcome.final_w.clone();
            match build_preconditioner(oracle.as_mut(), &w0, config) {
                Ok((p, est)) => {
                    let gain = eta * p.alpha() * p.alpha();
                    info!(
                        "{}: rank {} pre-conditioner, alpha^2 = {:.3e}, built from {} samples",
                        outcome.label,
                        p.rank(),
                        p.alpha() * p.alpha(),
                        oracle.data_read()
                    );
                    outcome.construction_data_read = Some(oracle.data_read());
                    outcome.estimates = Some(est);
                    descend(problem, config, oracle.as_mut(), &mut outcome, gain, |_, _, _, g| {
                        let step = p.apply_p_squared(g).expect("gradient has the problem dimension");
                        (step * eta, gain)
                    });
                }
                Err(e) => {
                    warn!("{}: pre-conditioner construction failed ({e}); running plain SGD", outcome.label);
                    outcome.fell_back = true;
                    outcome.construction_data_read = Some(oracle.data_read());
                    descend(problem, config, oracle.as_mut(), &mut outcome, eta, |_, _, _, g| (g * eta, eta));
                }
            }
        }
        EstimationMode::Scalar => {
            let period = config.steps_per_epoch(problem.n_data()) * config.rebuild_every;
            let init = config.solver.init_samples;
            let label = outcome.label.clone();
            let mut current = ScalarStep { eta };
            let mut estimates: Option<PriorEstimates> = None;
            if !config.warmup {
                let w0 = outcome.final_w.clone();
                rescale(oracle.as_mut(), &w0, init, &label, &mut current, &mut estimates);
            }
            let start_eta = current.eta;
            descend(problem, config, oracle.as_mut(), &mut outcome, start_eta, |o, step, w, g| {
                // the gradient for this step is already drawn; boundaries fall between steps
                if step > 1 && (step - 1) % period == 0 {
                    rescale(o, w, init, &label, &mut current, &mut estimates);
                }
                (g * current.eta, current.eta)
            });
            outcome.estimates = estimates;
        }
    }
    Ok(outcome)
}

fn rescale(
    oracle: &mut (dyn HessianOracle + Send + '_),
    w: &Array1<f64>,
    init_samples: usize,
    label: &str,
    current: &mut ScalarStep,
    estimates: &mut Option<PriorEstimates>,
) {
    match estimate_parameters(oracle, w, init_samples, EstimationMode::Scalar) {
        Ok(est) => {
            if current.update(&est) {
                info!("{label}: step length set to {:.4e}", current.eta);
            }
            *estimates = Some(est);
        }
        Err(e) => warn!("{label}: keeping step length {:.4e} ({e})", current.eta),
    }
}

/// avg-inv, noisy CG, or the exact optimum, on the same `data_read` axis.
pub fn run_baseline(problem: &BuiltProblem, config: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    let rec = Recorder::new(problem, config.timing);
    let mut outcome = RunOutcome::new(config, problem.initial_point(config.seed));
    match config.optimizer {
        Optimizer::NewtonOracle => {
            let (w, _) = problem
                .optimum()
                .ok_or_else(|| HarnessError::Unsupported("newton_oracle needs a convex problem".into()))?;
            outcome.records.push(rec.make(0, 0, w, 0.0));
            outcome.final_w = w.clone();
        }
        Optimizer::AvgInv => {
            let q = problem
                .quadratic()
                .ok_or_else(|| HarnessError::Unsupported("avg_inv needs a regression problem".into()))?;
            let mut avg = AvgInv::new(q, config.batch_size, config.seed)?;
            let total = config.total_steps(problem.n_data());
            outcome.records.push(rec.make(0, 0, &outcome.final_w, 0.0));
            for step in 1..=total {
                if let Some(max) = config.max_data_read {
                    if avg.data_read() + config.batch_size as u64 > max {
                        break;
                    }
                }
                avg.step();
                if step % config.record_every == 0 || step == total {
                    let r = rec.make(step, avg.data_read(), avg.estimate(), 0.0);
                    let done = reached(problem, config, &r);
                    outcome.records.push(r);
                    if done {
                        break;
                    }
                }
            }
            if outcome.records.last().map(|r| r.data_read) != Some(avg.data_read()) {
                let step = avg.data_read() as usize / avg_batch(config, problem);
                outcome.records.push(rec.make(step, avg.data_read(), avg.estimate(), 0.0));
            }
            outcome.final_w = avg.estimate().clone();
        }
        Optimizer::Cg => {
            let q = problem
                .quadratic()
                .ok_or_else(|| HarnessError::Unsupported("cg needs a regression problem".into()))?;
            let mut oracle = problem.oracle(config.batch_size, config.seed, config.hvp_mode)?;
            let iters = config.total_steps(problem.n_data());
            let cg = cg_baseline(oracle.as_mut(), q.rhs(), iters);
            let initial = rec.make(0, 0, &outcome.final_w, 0.0);
            let mut last_loss = initial.train_loss;
            outcome.records.push(initial);
            outcome.diverged = cg.diverged;
            let mut previous = outcome.final_w.clone();
            for it in &cg.iterates {
                let diff = &it.w - &previous;
                let length = diff.dot(&diff).sqrt();
                previous = it.w.clone();
                let r = rec.make(it.iteration, it.data_read, &it.w, length);
                // exact CG decreases the loss monotonically; any rise means breakdown
                let rise = r.train_loss - last_loss > 1e-10 * last_loss.abs();
                let blew_up = !r.train_loss.is_finite() || rise;
                last_loss = r.train_loss;
                if blew_up || it.iteration % config.record_every == 0 || it.iteration == cg.iterates.len() {
                    outcome.records.push(r);
                }
                if blew_up {
                    warn!("{}: noisy CG diverged at iteration {}", outcome.label, it.iteration);
                    outcome.diverged = true;
                    break;
                }
            }
            outcome.final_w = previous;
        }
        Optimizer::Sgd | Optimizer::PrecondSgd => {
            return Err(HarnessError::Config(format!(
                "{} is not a baseline",
                config.optimizer.name()
            )))
        }
    }
    Ok(outcome)
}

fn avg_batch(config: &ExperimentConfig, problem: &BuiltProblem) -> usize {
    config.batch_size.min(problem.n_data()).max(1)
}
