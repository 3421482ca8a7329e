use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand};
use scriptloop::artifacts::{find_runs, to_json, Validation};
use scriptloop::config::Config;
use scriptloop::report::write_report;
use scriptloop::run::{audit_run_dir, replay_run, EnvChoice, ReasonerChoice, RunSpec};
use scriptloop::suite::{parse_seeds, parse_suite, run_suite};
use scriptloop_core::engine::Condition;
use scriptloop_core::reasoners::NoisyReasoner;

#[derive(Parser)]
#[command(
    name = "scriptloop",
    version,
    about = "Script-writing agent harness for a tabletop simulator"
)]
struct Cli {
    /// TOML config file; SCRIPTLOOP_* variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Cmd {
    /// Run a suite and write per-run artifacts plus a report.
    Run(RunArgs),
    /// Re-verify stored runs against their scripts and traces.
    Replay {
        /// A run directory or an output directory holding many.
        #[arg(long)]
        run: PathBuf,
    },
    /// Audit a stored run and print the verdict; artifacts are not modified.
    Audit {
        #[arg(long)]
        run: PathBuf,
    },
    /// Rebuild report.csv and report.md from the runs under DIR.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// easy, medium, hard, all, oracle, or task ids separated by commas.
    #[arg(long, default_value = "all")]
    suite: String,
    /// `0..4` (inclusive), `7`, or `1,3,5`.
    #[arg(long, default_value = "0..4")]
    seeds: String,
    /// oracle, noisy, llm or replay.
    #[arg(long, default_value = "oracle")]
    reasoner: String,
    /// pilot, baseline or coaching.
    #[arg(long, default_value = "baseline")]
    condition: String,
    /// Trial cap; pilot defaults to 10, baseline takes none.
    #[arg(long)]
    cap: Option<u32>,
    /// Noisy offsets: `converging:N` or `dx,dy,dz;dx,dy,dz;...`.
    #[arg(long, default_value = "converging:12")]
    schedule: String,
    /// Output directory of the recorded runs to replay.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Coaching tips, one per line, replacing the built-in ones.
    #[arg(long)]
    coaching_file: Option<PathBuf>,
    /// Exemplar script prepended to every prompt.
    #[arg(long)]
    exemplar: Option<PathBuf>,
    /// HOST:PORT of a bridge server instead of the in-process simulator.
    #[arg(long)]
    env_endpoint: Option<String>,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

fn parse_schedule(text: &str) -> Result<Vec<[f64; 3]>> {
    if let Some(n) = text.strip_prefix("converging:") {
        let n: usize = n.parse().context("converging length")?;
        if n == 0 {
            bail!("schedule must not be empty");
        }
        return Ok(NoisyReasoner::converging(n, 0.01).schedule().to_vec());
    }
    text.split(';')
        .map(|triple| {
            let v: Vec<f64> = triple
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .with_context(|| format!("schedule entry '{triple}'"))?;
            match v[..] {
                [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok([x, y, z]),
                _ => bail!("schedule entry '{triple}' needs three finite numbers"),
            }
        })
        .collect()
}

fn cmd_run(a: RunArgs, config: Config) -> Result<ExitCode> {
    let tasks = parse_suite(&a.suite).map_err(anyhow::Error::msg)?;
    let seeds = parse_seeds(&a.seeds).map_err(anyhow::Error::msg)?;
    let condition = Condition::parse(&a.condition)
        .with_context(|| format!("unknown condition '{}'", a.condition))?;
    let reasoner = match a.reasoner.as_str() {
        "oracle" => ReasonerChoice::Oracle,
        "noisy" => ReasonerChoice::Noisy(parse_schedule(&a.schedule)?),
        "llm" => ReasonerChoice::Llm(config.llm.clone()),
        "replay" => {
            ReasonerChoice::Replay(a.trace_dir.context("--reasoner replay needs --trace-dir")?)
        }
        other => bail!("unknown reasoner '{other}'"),
    };
    let mut spec = RunSpec::new(tasks[0].clone(), seeds[0], condition, reasoner);
    match (condition, a.cap) {
        (Condition::Baseline, Some(_)) => bail!("baseline runs take no --cap"),
        (_, Some(c)) => spec.trial_cap = Some(c),
        _ => {}
    }
    if let Some(p) = &a.coaching_file {
        let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
        spec.coaching = Some(
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string)
                .collect(),
        );
    }
    if let Some(p) = &a.exemplar {
        spec.exemplar = Some(std::fs::read_to_string(p).with_context(|| p.display().to_string())?);
    }
    if let Some(e) = a.env_endpoint {
        spec.env = EnvChoice::Remote(e);
    }
    spec.config = config;

    let outcome = run_suite(&tasks, &seeds, &spec, &a.out, a.parallel)?;
    for (id, e) in &outcome.failures {
        eprintln!("{id}: {e}");
    }
    if let Some(rep) = &outcome.report {
        for (c, raw) in rep.categories.iter().zip(&rep.raw) {
            println!(
                "{}: {} runs, success {:.1}% (raw {:.1}%)",
                c.category,
                c.task_count,
                c.success_rate * 100.0,
                raw.success_rate * 100.0
            );
        }
    }
    println!("{} runs written to {}", outcome.runs.len(), a.out.display());
    Ok(if outcome.failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn run_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    if path.join(scriptloop::artifacts::META_FILE).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let dirs = find_runs(path)?;
    if dirs.is_empty() {
        bail!("no runs under {}", path.display());
    }
    Ok(dirs)
}

fn cmd_replay(path: PathBuf, config: &Config) -> Result<ExitCode> {
    let mut bad = 0;
    for dir in run_dirs(&path)? {
        let r = replay_run(&dir, &config.audit).with_context(|| dir.display().to_string())?;
        if r.is_match() {
            println!("{}: ok", r.run_id);
        } else {
            bad += 1;
            for m in &r.mismatches {
                println!("{}: MISMATCH {m}", r.run_id);
            }
        }
    }
    Ok(if bad == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_audit(dir: PathBuf, config: &Config) -> Result<ExitCode> {
    let report = audit_run_dir(&dir, &config.audit)?;
    print!("{}", to_json(&Validation::from(&report)));
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match Config::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.cmd {
        Cmd::Run(a) => cmd_run(a, config),
        Cmd::Replay { run } => cmd_replay(run, &config),
        Cmd::Audit { run } => cmd_audit(run, &config),
        Cmd::Report { out } => run_dirs(&out).and_then(|dirs| {
            write_report(&out, &dirs)?;
            println!(
                "report for {} runs written to {}",
                dirs.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
