//! Suites: many (task, seed) runs, optionally in parallel, then a report.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use scriptloop_core::task::Difficulty;
use scriptloop_core::{catalog, find_task, TaskSpec};

use crate::report::{write_report, Report, ReportError};
use crate::run::{execute_run, write_artifacts, RunError, RunSpec};

/// The five task families the analytic planner solves.
pub const ORACLE_SUITE: [&str; 5] = [
    "pick_cube",
    "push_cube",
    "pull_cube",
    "stack_cube",
    "place_sphere",
];

/// `easy`, `medium`, `hard`, `all`, `oracle`, or comma-separated task ids.
pub fn parse_suite(name: &str) -> Result<Vec<TaskSpec>, String> {
    let by = |d: Difficulty| {
        catalog()
            .into_iter()
            .filter(|t| t.difficulty == d)
            .collect()
    };
    Ok(match name {
        "easy" => by(Difficulty::Easy),
        "medium" => by(Difficulty::Medium),
        "hard" => by(Difficulty::Hard),
        "all" => catalog(),
        "oracle" => ORACLE_SUITE
            .iter()
            .map(|id| find_task(id).expect("oracle suite ids are in the catalog"))
            .collect(),
        list => list
            .split(',')
            .map(|id| find_task(id.trim()).ok_or_else(|| format!("unknown task '{}'", id.trim())))
            .collect::<Result<_, _>>()?,
    })
}

/// `7`, `0..4` (inclusive), or `1,3,5`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let num = |s: &str| {
        s.trim()
            .parse::<u64>()
            .map_err(|_| format!("bad seed '{}'", s.trim()))
    };
    if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(format!("empty seed range {text}"));
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(num).collect()
}

#[derive(Debug)]
pub struct SuiteOutcome {
    /// Directories written, in (task, seed) order.
    pub runs: Vec<PathBuf>,
    pub failures: Vec<(String, RunError)>,
    pub report: Option<Report>,
}

/// Runs every (task, seed) pair built from `template`, writes each run under
/// `out`, then writes the report for the runs that completed.
pub fn run_suite(
    tasks: &[TaskSpec],
    seeds: &[u64],
    template: &RunSpec,
    out: &Path,
    parallel: usize,
) -> Result<SuiteOutcome, ReportError> {
    let jobs: Vec<RunSpec> = tasks
        .iter()
        .flat_map(|t| {
            seeds.iter().map(move |&s| RunSpec {
                task: t.clone(),
                seed: s,
                ..template.clone()
            })
        })
        .collect();
    let one = |spec: &RunSpec| -> Result<PathBuf, RunError> {
        let (_, art) = execute_run(spec)?;
        write_artifacts(out, &art)
    };
    let results: Vec<Result<PathBuf, RunError>> = if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| ReportError::Invalid(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(one).collect())
    } else {
        jobs.iter().map(one).collect()
    };
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (spec, r) in jobs.iter().zip(results) {
        match r {
            Ok(d) => runs.push(d),
            Err(e) => failures.push((crate::artifacts::run_id(&spec.task.id, spec.seed), e)),
        }
    }
    let report = if runs.is_empty() {
        None
    } else {
        Some(write_report(out, &runs)?)
    };
    Ok(SuiteOutcome {
        runs,
        failures,
        report,
    })
}
