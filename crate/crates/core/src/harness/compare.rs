use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::problem::BuiltProblem;
use super::record::CSV_HEADER;
use super::run::{run_on, RunOutcome};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub optimizer: String,
    pub final_train_loss: f64,
    pub final_data_read: u64,
    /// First recorded `data_read` with `(L − L*)/|L*| ≤ target`; needs a
    /// known optimum.
    pub data_read_to_target: Option<u64>,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub runs: Vec<RunOutcome>,
    pub summary: Vec<RunSummary>,
}

impl Comparison {
    /// Merged records, one row per (run, record), ordered by run then
    /// `data_read`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), HarnessError> {
        let io = |e: csv::Error| HarnessError::Io(e.to_string());
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        let mut header = vec!["run", "optimizer"];
        header.extend(CSV_HEADER);
        writer.write_record(&header).map_err(io)?;
        for run in &self.runs {
            let mut records = run.records.clone();
            records.sort_by_key(|r| r.data_read);
            for r in &records {
                writer
                    .serialize((&run.label, run.optimizer.name(), r))
                    .map_err(io)?;
            }
        }
        writer.flush().map_err(|e| HarnessError::Io(e.to_string()))
    }
}

/// Relative suboptimality `(L − L*)/|L*|`.
pub fn suboptimality(loss: f64, optimum: f64) -> f64 {
    (loss - optimum) / optimum.abs().max(f64::MIN_POSITIVE)
}

/// Builds the shared problem once and runs every config on it in parallel.
/// Writes the merged CSV to `output` and the summary next to it as JSON.
pub fn compare(configs: &[ExperimentConfig], output: Option<&Path>) -> Result<Comparison, HarnessError> {
    let first = check_shared(configs)?;
    let problem = BuiltProblem::build(&first.problem)?;
    let comparison = compare_on(&problem, configs)?;
    if let Some(path) = output {
        let file = std::fs::File::create(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        comparison.write_csv(std::io::BufWriter::new(file))?;
        let summary_path = path.with_extension("summary.json");
        let text = serde_json::to_string_pretty(&comparison.summary).map_err(|e| HarnessError::Io(e.to_string()))?;
        std::fs::write(&summary_path, text + "\n")
            .map_err(|e| HarnessError::Io(format!("{}: {e}", summary_path.display())))?;
    }
    Ok(comparison)
}

fn check_shared(configs: &[ExperimentConfig]) -> Result<&ExperimentConfig, HarnessError> {
    let first = configs
        .first()
        .ok_or_else(|| HarnessError::Config("no configurations to compare".into()))?;
    for c in configs {
        c.validate()?;
        if c.problem != first.problem {
            return Err(HarnessError::Config(format!(
                "run {:?} uses a different problem from {:?}",
                c.label(),
                first.label()
            )));
        }
        if c.seed != first.seed {
            return Err(HarnessError::Config(format!(
                "run {:?} uses seed {} but {:?} uses {}",
                c.label(),
                c.seed,
                first.label(),
                first.seed
            )));
        }
    }
    Ok(first)
}

pub fn compare_on(problem: &BuiltProblem, configs: &[ExperimentConfig]) -> Result<Comparison, HarnessError> {
    check_shared(configs)?;
    // computed once before the runs fan out
    let optimum = problem.optimum().map(|(_, l)| *l);
    let runs: Vec<RunOutcome> = configs
        .par_iter()
        .map(|c| run_on(problem, c))
        .collect::<Result<_, _>>()?;
    let summary = runs
        .iter()
        .zip(configs)
        .map(|(run, config)| {
            let last = run.records.last();
            RunSummary {
                label: run.label.clone(),
                optimizer: run.optimizer.name().to_string(),
                final_train_loss: last.map_or(f64::NAN, |r| r.train_loss),
                final_data_read: last.map_or(0, |r| r.data_read),
                data_read_to_target: optimum.and_then(|opt| {
                    run.records
                        .iter()
                        .find(|r| suboptimality(r.train_loss, opt) <= config.target)
                        .map(|r| r.data_read)
                }),
                diverged: run.diverged,
            }
        })
        .collect();
    Ok(Comparison { runs, summary })
}
