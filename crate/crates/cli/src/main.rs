//! Command-line front end for the probhess experiment harness.
//!
//! Every subcommand reads an experiment config: built-in defaults, then the
//! JSON file given with `--config`, then individual flags, then `--set`
//! overrides, each layer replacing the previous one.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::{Map, Value};

use probhess::harness::{self, BuiltProblem, ExperimentConfig, HarnessError, ProblemKind};
use probhess::precond::PreconditionerRecord;
use probhess::{estimate_parameters, run_inference, EstimationMode};

#[derive(Parser)]
#[command(name = "probhess", version, about = "Probabilistic Hessian inference and pre-conditioned SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train and test sets as CSV.
    GenData {
        #[command(flatten)]
        opts: ConfigArgs,
        /// Directory for train.csv and test.csv.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Print the empirical prior and noise parameters at the initial point.
    Estimate {
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Run the active solver and save the posterior mean as JSON.
    Solve {
        #[command(flatten)]
        opts: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the low-rank pre-conditioner and save it as JSON.
    Precond {
        #[command(flatten)]
        opts: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one optimizer and write its records as CSV.
    Run {
        #[command(flatten)]
        opts: ConfigArgs,
        /// CSV destination; standard output if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several configs on one problem and write a merged CSV plus a
    /// JSON summary next to it.
    Compare {
        /// Config files, each holding one config object or an array of them.
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Default)]
struct Overrides {
    /// sgd, precond_sgd, avg_inv, cg or newton_oracle.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_data_read: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Solver iterations m.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    /// full or scalar.
    #[arg(long)]
    mode: Option<String>,
    /// Record measured wall-clock times (output is then not reproducible).
    #[arg(long)]
    timing: bool,
    /// Arbitrary override `dotted.path=json`, e.g. `problem.spread=2.5`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn apply(&self, doc: &mut Value) -> anyhow::Result<()> {
        let mut put = |path: &str, v: Value| set_path(doc, path, v);
        if let Some(v) = &self.optimizer {
            put("optimizer", Value::from(v.replace('-', "_")));
        }
        if let Some(v) = self.learning_rate {
            put("learning_rate", v.into());
        }
        if let Some(v) = self.batch_size {
            put("batch_size", v.into());
        }
        if let Some(v) = self.steps {
            put("steps", v.into());
        }
        if let Some(v) = self.epochs {
            put("epochs", v.into());
        }
        if let Some(v) = self.max_data_read {
            put("max_data_read", v.into());
        }
        if let Some(v) = self.seed {
            put("seed", v.into());
        }
        if let Some(v) = self.record_every {
            put("record_every", v.into());
        }
        if let Some(v) = self.iterations {
            put("solver.iterations", v.into());
        }
        if let Some(v) = self.rank {
            put("solver.rank", v.into());
        }
        if let Some(v) = self.beta {
            put("solver.beta", v.into());
        }
        if let Some(v) = &self.mode {
            put("solver.mode", Value::from(v.as_str()));
        }
        if self.timing {
            put("timing", true.into());
        }
        for item in &self.set {
            let (path, raw) = item
                .split_once('=')
                .with_context(|| format!("--set expects PATH=VALUE, got {item:?}"))?;
            // bare words are taken as strings
            let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::from(raw));
            put(path, v);
        }
        Ok(())
    }
}

fn set_path(doc: &mut Value, path: &str, v: Value) {
    let mut cur = doc;
    let mut keys = path.split('.').peekable();
    while let Some(key) = keys.next() {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let map = cur.as_object_mut().expect("just made an object");
        if keys.peek().is_none() {
            map.insert(key.to_string(), v);
            return;
        }
        cur = map.entry(key).or_insert_with(|| Value::Object(Map::new()));
    }
}

/// Marks failures that come from the user's input rather than the numerics.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(e: impl std::fmt::Display) -> anyhow::Error {
    ConfigError(e.to_string()).into()
}

fn harness_error(e: HarnessError) -> anyhow::Error {
    if e.is_config() {
        config_error(e)
    } else {
        e.into()
    }
}

fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn finish(doc: Value, overrides: &Overrides) -> anyhow::Result<ExperimentConfig> {
    let mut doc = if doc.is_object() { doc } else { Value::Object(Map::new()) };
    overrides.apply(&mut doc).map_err(config_error)?;
    let config: ExperimentConfig = serde_json::from_value(doc).map_err(config_error)?;
    config.validate().map_err(harness_error)?;
    Ok(config)
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<ExperimentConfig> {
    let doc = match &args.config {
        Some(path) => read_json(path)?,
        None => Value::Object(Map::new()),
    };
    if !doc.is_object() {
        return Err(config_error("config must be a JSON object"));
    }
    finish(doc, &args.overrides)
}

fn load_many(paths: &[PathBuf], overrides: &Overrides) -> anyhow::Result<Vec<ExperimentConfig>> {
    let mut configs = Vec::new();
    for path in paths {
        match read_json(path)? {
            Value::Array(items) => {
                for item in items {
                    configs.push(finish(item, overrides)?);
                }
            }
            doc @ Value::Object(_) => configs.push(finish(doc, overrides)?),
            _ => return Err(config_error(format!("{}: expected an object or array", path.display()))),
        }
    }
    Ok(configs)
}

fn writer(out: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    let mut w = writer(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn build(config: &ExperimentConfig) -> anyhow::Result<BuiltProblem> {
    BuiltProblem::build(&config.problem).map_err(harness_error)
}

/// Exit status 2: the optimizer diverged.
struct Diverged;

fn gen_data(config: &ExperimentConfig, dir: &Path) -> anyhow::Result<()> {
    let (train, test) = match &config.problem.kind {
        ProblemKind::Regression(r) => r.generate().map_err(config_error)?,
        ProblemKind::Logistic(c) => c.generate(),
        ProblemKind::Mlp(m) => m.generate(),
    };
    std::fs::create_dir_all(dir).map_err(|e| config_error(format!("{}: {e}", dir.display())))?;
    for (name, data) in [("train.csv", &train), ("test.csv", &test)] {
        let path = dir.join(name);
        data.write_csv(&path).map_err(config_error)?;
        info!("wrote {} samples to {}", data.len(), path.display());
    }
    Ok(())
}

fn estimate(config: &ExperimentConfig) -> anyhow::Result<()> {
    let problem = build(config)?;
    let mut oracle = problem.oracle(config.batch_size, config.seed, config.hvp_mode).map_err(harness_error)?;
    let w = problem.initial_point(config.seed);
    let est = estimate_parameters(oracle.as_mut(), &w, config.solver.init_samples, config.solver.mode)?;
    let mut summary = Map::new();
    summary.insert("b0".into(), est.b0.into());
    summary.insert("w0".into(), est.w0.into());
    summary.insert("lambda0".into(), est.lambda0.into());
    if config.solver.mode == EstimationMode::Scalar {
        summary.insert("step_length".into(), (1.0 / est.b0).into());
    }
    summary.insert("data_read".into(), oracle.data_read().into());
    write_json(None, &Value::Object(summary))
}

fn solve(config: &ExperimentConfig, out: Option<&Path>) -> anyhow::Result<()> {
    let problem = build(config)?;
    let mut oracle = problem.oracle(config.batch_size, config.seed, config.hvp_mode).map_err(harness_error)?;
    let w = problem.initial_point(config.seed);
    let est = estimate_parameters(oracle.as_mut(), &w, config.solver.init_samples, config.solver.mode)?;
    let run = run_inference(oracle.as_mut(), &w, &est, &config.solver.solver_config())?;
    info!(
        "{} of {} iterations kept, {} samples read",
        run.completed,
        config.solver.iterations,
        oracle.data_read()
    );
    write_json(out, &run.posterior)
}

fn precond(config: &ExperimentConfig, out: Option<&Path>) -> anyhow::Result<()> {
    let problem = build(config)?;
    let mut oracle = problem.oracle(config.batch_size, config.seed, config.hvp_mode).map_err(harness_error)?;
    let w = problem.initial_point(config.seed);
    let (p, _) = harness::build_preconditioner(oracle.as_mut(), &w, config).map_err(harness_error)?;
    info!(
        "rank {}, alpha^2 = {:.4e}, {} samples read",
        p.rank(),
        p.alpha() * p.alpha(),
        oracle.data_read()
    );
    write_json(out, &PreconditionerRecord::from(&p))
}

fn run(config: &ExperimentConfig, out: Option<&Path>) -> anyhow::Result<Option<Diverged>> {
    let outcome = harness::run(config).map_err(harness_error)?;
    harness::write_records(writer(out)?, &outcome.records).map_err(harness_error)?;
    if let Some(last) = outcome.final_record() {
        info!(
            "{}: final train loss {:.6e} after {} samples",
            outcome.label, last.train_loss, last.data_read
        );
    }
    if outcome.fell_back {
        warn!("{}: ran as plain SGD after the pre-conditioner failed", outcome.label);
    }
    Ok(outcome.diverged.then_some(Diverged))
}

fn compare(configs: &[ExperimentConfig], out: &Path) -> anyhow::Result<()> {
    let result = harness::compare(configs, Some(out)).map_err(harness_error)?;
    for s in &result.summary {
        let reached = s.data_read_to_target.map_or("-".to_string(), |d| d.to_string());
        println!(
            "{:<20} {:<14} final {:.6e}  to-target {:>10}{}",
            s.label,
            s.optimizer,
            s.final_train_loss,
            reached,
            if s.diverged { "  diverged" } else { "" }
        );
    }
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<Option<Diverged>> {
    match cli.command {
        Command::GenData { opts, out_dir } => gen_data(&load_config(&opts)?, &out_dir)?,
        Command::Estimate { opts } => estimate(&load_config(&opts)?)?,
        Command::Solve { opts, out } => solve(&load_config(&opts)?, out.as_deref())?,
        Command::Precond { opts, out } => precond(&load_config(&opts)?, out.as_deref())?,
        Command::Run { opts, out } => return run(&load_config(&opts)?, out.as_deref()),
        Command::Compare { configs, overrides, out } => compare(&load_many(&configs, &overrides)?, &out)?,
    }
    Ok(None)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap's own status for usage errors is 2, which here means divergence
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(Diverged)) => {
            eprintln!("error: the run diverged");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
