//! One (task, seed) run end to end, and the post-hoc checks on its artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rust_decimal::Decimal;
use scriptloop_core::audit::{validate_run, AuditConfig, AuditInput, ValidationReport, Verdict};
use scriptloop_core::digest::sha256_hex;
use scriptloop_core::dsl::{execute, parse, serialize, EpisodeScript};
use scriptloop_core::engine::{
    run_task, Clock, Condition, PromptTemplate, ReasonerReply, RecordKind, RunConfig, RunPolicy,
    ToolCall, ToolKind, TraceRecord, TurnFailure, COACHING_TIPS,
};
use scriptloop_core::ledger::ResourceLedger;
use scriptloop_core::reasoners::{NoisyReasoner, OracleReasoner, ScriptedReasoner};
use scriptloop_core::{find_task, EnvError, Environment, Reasoner, RunResult, Sim, TaskSpec};

use crate::artifacts::{
    self, read_episode, read_meta, read_trace, records, run_dir, run_id, ArtifactError, FlagEntry,
    Meta, RunArtifacts, TraceLine, Validation, SCHEMA_VERSION,
};
use crate::config::{Config, LlmConfig};
use crate::llm::{LlmReasoner, LlmSetupError};
use crate::wire::{connect_remote, DEFAULT_TIMEOUT};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("unknown task '{0}'")]
    UnknownTask(String),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Engine(#[from] scriptloop_core::engine::RunError),
    #[error(transparent)]
    Llm(#[from] LlmSetupError),
    #[error("{0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReasonerChoice {
    /// Analytic planner; attempts insertion from the coarse goal.
    Oracle,
    /// Oracle plan shifted by a per-attempt offset schedule.
    Noisy(Vec<[f64; 3]>),
    Llm(LlmConfig),
    /// Re-emits the calls recorded under this output directory.
    Replay(PathBuf),
}

impl ReasonerChoice {
    pub fn name(&self) -> &'static str {
        match self {
            ReasonerChoice::Oracle => "oracle",
            ReasonerChoice::Noisy(_) => "noisy",
            ReasonerChoice::Llm(_) => "llm",
            ReasonerChoice::Replay(_) => "replay",
        }
    }

    pub fn build(&self, task: &str, seed: u64) -> Result<Box<dyn Reasoner + Send>, RunError> {
        Ok(match self {
            ReasonerChoice::Oracle => Box::new(OracleReasoner::waypoint()),
            ReasonerChoice::Noisy(s) => Box::new(NoisyReasoner::new(s.clone())),
            ReasonerChoice::Llm(cfg) => Box::new(LlmReasoner::new(cfg)?),
            ReasonerChoice::Replay(dir) => {
                Box::new(replay_reasoner(&read_trace(&run_dir(dir, task, seed))?))
            }
        })
    }
}

/// Rebuilds the recorded turns as a scripted reasoner.
pub fn replay_reasoner(lines: &[TraceLine]) -> ScriptedReasoner {
    let mut turns: Vec<Result<ReasonerReply, TurnFailure>> = Vec::new();
    let mut current = 0;
    for r in records(lines) {
        if r.turn != current {
            current = r.turn;
            turns.push(Ok(ReasonerReply {
                calls: Vec::new(),
                tokens_out: None,
            }));
        }
        let slot = turns.last_mut().expect("pushed above");
        match r.kind {
            RecordKind::TurnFailed => *slot = Err(TurnFailure::new(r.result_summary)),
            RecordKind::Tool(kind) => {
                if let Ok(reply) = slot {
                    reply.calls.push(ToolCall::new(kind, r.name, r.payload));
                }
            }
        }
    }
    ScriptedReasoner::new(turns)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnvChoice {
    Local,
    /// `HOST:PORT` of a bridge server.
    Remote(String),
}

pub struct MonotonicClock(Instant);

impl Default for MonotonicClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for MonotonicClock {
    fn now_ms(&mut self) -> u64 {
        self.0.elapsed().as_millis() as u64
    }
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub task: TaskSpec,
    pub seed: u64,
    pub condition: Condition,
    pub trial_cap: Option<u32>,
    pub reasoner: ReasonerChoice,
    pub coaching: Option<Vec<String>>,
    pub exemplar: Option<String>,
    pub env: EnvChoice,
    pub config: Config,
}

impl RunSpec {
    pub fn new(task: TaskSpec, seed: u64, condition: Condition, reasoner: ReasonerChoice) -> Self {
        let trial_cap = match condition {
            Condition::Pilot => Some(scriptloop_core::engine::PILOT_TRIAL_CAP),
            _ => None,
        };
        Self {
            task,
            seed,
            condition,
            trial_cap,
            reasoner,
            coaching: (condition == Condition::Coaching)
                .then(|| COACHING_TIPS.iter().map(|t| t.to_string()).collect()),
            exemplar: None,
            env: EnvChoice::Local,
            config: Config::default(),
        }
    }
}

/// Audit with values from a trusted local reset of (task, seed).
pub fn audit_records(
    task: &TaskSpec,
    seed: u64,
    records: &[TraceRecord],
    raw_success: bool,
    final_script: Option<&EpisodeScript>,
    cfg: &AuditConfig,
) -> Result<ValidationReport, RunError> {
    let mut env = Sim::default();
    let initial_obs = env.reset(task, seed)?;
    let hidden = env
        .hidden_values()
        .expect("hidden values exist after reset");
    let id = run_id(&task.id, seed);
    Ok(validate_run(
        &AuditInput {
            run_id: &id,
            task,
            records,
            initial_obs: &initial_obs,
            hidden: &hidden,
            raw_success,
            final_script,
        },
        cfg,
    ))
}

fn tool_count_map(ledger: &ResourceLedger) -> BTreeMap<String, u64> {
    ledger
        .tool_counts
        .iter()
        .map(|(k, v)| (k.as_str().to_string(), *v))
        .collect()
}

/// Assembles the four artifacts for a finished run.
pub fn artifacts_for(
    result: &RunResult,
    task: &TaskSpec,
    condition: Condition,
    reasoner: &str,
    report: &ValidationReport,
) -> RunArtifacts {
    let episode = result
        .final_script
        .as_ref()
        .map(serialize)
        .unwrap_or_default();
    let flags: Vec<FlagEntry> = report.flags.iter().map(FlagEntry::from).collect();
    let meta = Meta {
        schema_version: SCHEMA_VERSION,
        task: result.task_id.clone(),
        seed: result.seed,
        condition: condition.as_str().into(),
        reasoner: reasoner.into(),
        category: task.difficulty.as_str().into(),
        success: result.success && report.verdict == Verdict::Clean,
        raw_success: result.success,
        num_tries: result.num_tries,
        num_turns: result.num_turns,
        end_reason: result.end.as_str().into(),
        flags,
        tokens_out: result.ledger.tokens_out,
        cost_rate_usd: result.ledger.rate.normalize().to_string(),
        cost_usd: result.ledger.cost_usd().normalize().to_string(),
        tool_counts: tool_count_map(&result.ledger),
        episode_sha256: sha256_hex(episode.as_bytes()),
    };
    RunArtifacts {
        meta,
        episode,
        trace: result.records.iter().map(TraceLine::from).collect(),
        validation: Validation::from(report),
    }
}

/// Runs, audits and returns the artifacts (not yet written).
pub fn execute_run(spec: &RunSpec) -> Result<(RunResult, RunArtifacts), RunError> {
    let policy = RunPolicy::new(spec.condition, spec.trial_cap, spec.config.max_turns)
        .map_err(|e| RunError::Setup(e.to_string()))?;
    let config = RunConfig {
        policy,
        seed: spec.seed,
        template: PromptTemplate::default(),
        coaching: spec.coaching.clone(),
        exemplar: spec.exemplar.clone(),
        char_budget: spec.config.char_budget,
        ledger: ResourceLedger::with_rate(spec.config.rate_usd),
    };
    let mut reasoner = spec.reasoner.build(&spec.task.id, spec.seed)?;
    let mut clock = MonotonicClock::default();
    let result = match &spec.env {
        EnvChoice::Local => run_task(
            &spec.task,
            &mut reasoner,
            &config,
            &mut Sim::default(),
            &mut clock,
        )?,
        EnvChoice::Remote(endpoint) => {
            let mut env = connect_remote(endpoint, DEFAULT_TIMEOUT)?;
            let r = run_task(&spec.task, &mut reasoner, &config, &mut env, &mut clock)?;
            // the run is complete; a failed goodbye is not worth failing it for
            let _ = env.close();
            r
        }
    };
    let report = audit_records(
        &spec.task,
        spec.seed,
        &result.records,
        result.success,
        result.final_script.as_ref(),
        &spec.config.audit,
    )?;
    let art = artifacts_for(
        &result,
        &spec.task,
        spec.condition,
        spec.reasoner.name(),
        &report,
    );
    Ok((result, art))
}

fn task_for(meta: &Meta) -> Result<TaskSpec, RunError> {
    find_task(&meta.task).ok_or_else(|| RunError::UnknownTask(meta.task.clone()))
}

fn episode_script(text: &str) -> Result<Option<EpisodeScript>, RunError> {
    if text.trim().is_empty() {
        return Ok(None);
    }
    parse(text)
        .map(Some)
        .map_err(|e| RunError::Setup(format!("episode.episode: {e}")))
}

/// Audits a run directory without modifying it.
pub fn audit_run_dir(dir: &Path, cfg: &AuditConfig) -> Result<ValidationReport, RunError> {
    let meta = read_meta(dir)?;
    let task = task_for(&meta)?;
    let trace = read_trace(dir)?;
    let script = episode_script(&read_episode(dir)?)?;
    audit_records(
        &task,
        meta.seed,
        &records(&trace),
        meta.raw_success,
        script.as_ref(),
        cfg,
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub run_id: String,
    /// Success of the stored final script re-executed on (task, seed).
    pub recomputed_success: bool,
    pub mismatches: Vec<String>,
}

impl ReplayReport {
    pub fn is_match(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn check(diff: &mut Vec<String>, what: &str, stored: String, actual: String) {
    if stored != actual {
        diff.push(format!("{what}: meta says {stored}, recomputed {actual}"));
    }
}

fn rerun(task: &TaskSpec, seed: u64, script: &EpisodeScript) -> Result<(bool, String), RunError> {
    let mut env = Sim::default();
    env.reset(task, seed)?;
    let t = execute(script, &mut env)?;
    Ok((t.outcome.success, t.obs_digest()))
}

/// Recomputes a run's outcome from its script and trace and diffs it against
/// `meta.json`.
pub fn replay_run(dir: &Path, cfg: &AuditConfig) -> Result<ReplayReport, RunError> {
    let meta = read_meta(dir)?;
    let task = task_for(&meta)?;
    let episode = read_episode(dir)?;
    let trace = read_trace(dir)?;
    let recs = records(&trace);
    let mut diff = Vec::new();

    check(
        &mut diff,
        "episode_sha256",
        meta.episode_sha256.clone(),
        sha256_hex(episode.as_bytes()),
    );
    let script = episode_script(&episode)?;
    let recomputed_success = match &script {
        Some(s) => rerun(&task, meta.seed, s)?.0,
        None => false,
    };
    if meta.raw_success {
        check(
            &mut diff,
            "raw_success",
            "true".into(),
            recomputed_success.to_string(),
        );
    }

    let execs: Vec<&TraceRecord> = recs
        .iter()
        .filter(|r| r.kind == RecordKind::Tool(ToolKind::ExecScript) && r.obs_digest.is_some())
        .collect();
    check(
        &mut diff,
        "num_tries",
        meta.num_tries.to_string(),
        execs.len().to_string(),
    );
    let turns = recs.last().map_or(0, |r| r.turn);
    check(
        &mut diff,
        "num_turns",
        meta.num_turns.to_string(),
        turns.to_string(),
    );

    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for r in &recs {
        if let RecordKind::Tool(k) = r.kind {
            *counts.entry(k.as_str().to_string()).or_default() += 1;
        }
    }
    check(
        &mut diff,
        "tool_counts",
        format!("{:?}", meta.tool_counts),
        format!("{counts:?}"),
    );

    match (
        Decimal::from_str_exact(&meta.cost_rate_usd),
        Decimal::from_str_exact(&meta.cost_usd),
    ) {
        (Ok(rate), Ok(cost)) => check(
            &mut diff,
            "cost_usd",
            cost.normalize().to_string(),
            (Decimal::from(meta.tokens_out) * rate)
                .normalize()
                .to_string(),
        ),
        _ => diff.push("cost fields are not decimals".into()),
    }

    // every execution's observation digest must reproduce from its script
    let mut written: BTreeMap<&str, &str> = BTreeMap::new();
    for r in &recs {
        match r.kind {
            RecordKind::Tool(ToolKind::WriteScript) if r.ok => {
                written.insert(&r.name, &r.payload);
            }
            RecordKind::Tool(ToolKind::ExecScript) => {
                if let (Some(digest), Some(text)) = (&r.obs_digest, written.get(r.name.as_str())) {
                    let s = parse(text).map_err(|e| RunError::Setup(e.to_string()))?;
                    let (_, d) = rerun(&task, meta.seed, &s)?;
                    if &d != digest {
                        diff.push(format!(
                            "turn {}: observation digest of '{}' differs",
                            r.turn, r.name
                        ));
                    }
                }
            }
            _ => {}
        }
    }

    let report = audit_records(
        &task,
        meta.seed,
        &recs,
        meta.raw_success,
        script.as_ref(),
        cfg,
    )?;
    let kinds = |f: &[FlagEntry]| f.iter().map(|e| e.kind.clone()).collect::<Vec<_>>();
    let audited: Vec<FlagEntry> = report.flags.iter().map(FlagEntry::from).collect();
    check(
        &mut diff,
        "flags",
        format!("{:?}", kinds(&meta.flags)),
        format!("{:?}", kinds(&audited)),
    );
    let reported = meta.raw_success && report.verdict == Verdict::Clean;
    check(
        &mut diff,
        "success",
        meta.success.to_string(),
        reported.to_string(),
    );

    Ok(ReplayReport {
        run_id: run_id(&meta.task, meta.seed),
        recomputed_success,
        mismatches: diff,
    })
}

pub fn write_artifacts(out: &Path, art: &RunArtifacts) -> Result<PathBuf, RunError> {
    let dir = run_dir(out, &art.meta.task, art.meta.seed);
    artifacts::write_run(&dir, art)?;
    Ok(dir)
}
