//! The reason-act-observe loop.
//!
//! Each turn the reasoner sees the rendered prompt (task, scene, attempt
//! history) and the results of its previous tool calls, and answers with one or
//! more [`ToolCall`]s. Scripts are written into a per-run workspace, executed
//! against a freshly reset environment, and every execution is appended to the
//! run's [`Context`]. A run ends on `FINISH` (verified by re-execution),
//! `GIVE_UP`, an exhausted trial cap, or the turn budget.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::fmt::Write as _;

use crate::context::{AttemptRecord, Context, DEFAULT_CHAR_BUDGET};
use crate::digest::sha256_hex;
use crate::domain::Observation;
use crate::dsl::{self, EpisodeScript, Trace};
use crate::error::{ContractError, EnvError};
use crate::ledger::{LedgerEvent, ResourceLedger};
use crate::sim::Environment;
use crate::task::TaskSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ToolKind {
    ExecScript,
    WriteScript,
    Read,
    FetchDoc,
    Finish,
    GiveUp,
}

impl ToolKind {
    pub const ALL: [ToolKind; 6] = [
        ToolKind::ExecScript,
        ToolKind::WriteScript,
        ToolKind::Read,
        ToolKind::FetchDoc,
        ToolKind::Finish,
        ToolKind::GiveUp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolKind::WriteScript => "WRITE_SCRIPT",
            ToolKind::ExecScript => "EXEC_SCRIPT",
            ToolKind::Read => "READ",
            ToolKind::FetchDoc => "FETCH_DOC",
            ToolKind::Finish => "FINISH",
            ToolKind::GiveUp => "GIVE_UP",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn terminates(self) -> bool {
        matches!(self, ToolKind::Finish | ToolKind::GiveUp)
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolCall {
    pub kind: ToolKind,
    /// Artifact key (script name, doc key); empty for `GIVE_UP`.
    pub name: String,
    /// Script text, finish claim, or give-up reason.
    pub payload: String,
}

impl ToolCall {
    pub fn write(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self::new(ToolKind::WriteScript, name, text)
    }
    pub fn exec(name: impl Into<String>) -> Self {
        Self::new(ToolKind::ExecScript, name, "")
    }
    pub fn read(name: impl Into<String>) -> Self {
        Self::new(ToolKind::Read, name, "")
    }
    pub fn fetch_doc(key: impl Into<String>) -> Self {
        Self::new(ToolKind::FetchDoc, key, "")
    }
    pub fn finish(name: impl Into<String>, claim: impl Into<String>) -> Self {
        Self::new(ToolKind::Finish, name, claim)
    }
    pub fn give_up(reason: impl Into<String>) -> Self {
        Self::new(ToolKind::GiveUp, "", reason)
    }

    pub fn new(kind: ToolKind, name: impl Into<String>, payload: impl Into<String>) -> Self {
        Self {
            kind,
            name: name.into(),
            payload: payload.into(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            ToolKind::WriteScript if self.payload.trim().is_empty() => {
                Err("WRITE_SCRIPT requires a non-empty payload".into())
            }
            ToolKind::WriteScript
            | ToolKind::ExecScript
            | ToolKind::Read
            | ToolKind::FetchDoc
            | ToolKind::Finish
                if self.name.trim().is_empty() =>
            {
                Err(format!("{} requires a name", self.kind))
            }
            _ => Ok(()),
        }
    }
}

/// What the reasoner sees back from one dispatched call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolResult {
    pub kind: ToolKind,
    pub name: String,
    pub ok: bool,
    pub summary: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Condition {
    Pilot,
    Baseline,
    Coaching,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Pilot => "pilot",
            Condition::Baseline => "baseline",
            Condition::Coaching => "coaching",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pilot" => Some(Condition::Pilot),
            "baseline" => Some(Condition::Baseline),
            "coaching" => Some(Condition::Coaching),
            _ => None,
        }
    }
}

pub const PILOT_TRIAL_CAP: u32 = 10;
pub const DEFAULT_MAX_TURNS: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunPolicy {
    pub trial_cap: Option<u32>,
    pub max_turns: u32,
    pub condition: Condition,
}

impl RunPolicy {
    pub fn new(
        condition: Condition,
        trial_cap: Option<u32>,
        max_turns: u32,
    ) -> Result<Self, ContractError> {
        let bad = |m: &str| Err(ContractError::InvalidPolicy(m.to_string()));
        match (condition, trial_cap) {
            (Condition::Pilot, None) => return bad("pilot runs need a trial cap"),
            (Condition::Baseline, Some(_)) => return bad("baseline runs have no trial cap"),
            (_, Some(0)) => return bad("trial cap must be positive"),
            _ => {}
        }
        if max_turns == 0 {
            return bad("max_turns must be positive");
        }
        Ok(Self {
            trial_cap,
            max_turns,
            condition,
        })
    }

    pub fn pilot() -> Self {
        Self {
            trial_cap: Some(PILOT_TRIAL_CAP),
            max_turns: DEFAULT_MAX_TURNS,
            condition: Condition::Pilot,
        }
    }

    pub fn baseline() -> Self {
        Self {
            trial_cap: None,
            max_turns: DEFAULT_MAX_TURNS,
            condition: Condition::Baseline,
        }
    }

    pub fn with_max_turns(mut self, max_turns: u32) -> Self {
        self.max_turns = max_turns.max(1);
        self
    }
}

pub const TASK_PLACEHOLDER: &str = "{{TASK_DESCRIPTION}}";

/// Human-authored manipulation heuristics appended under the coaching condition.
pub const COACHING_TIPS: [&str; 5] = [
    "Think about how a human would accomplish the task. Break it down into descriptive actions.",
    "Build the episode iteratively in each ReAct cycle: record state, plan movements, review progress.",
    "Keep a high z height when moving to avoid collisions.",
    "Rotate gripper when it keeps hitting unintended objects.",
    "Beware of obstacles in the action trajectory.",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub instruction: String,
    pub requirements: Vec<String>,
    pub guidelines: Vec<String>,
    pub output: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template must contain exactly one {TASK_PLACEHOLDER} placeholder, found {0}")]
    Placeholder(usize),
}

fn lines(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            instruction: format!(
                "You are an expert in robotics control. Your primary goal is to create a single \
                 script containing an episode that reaches success:\n- with task: {TASK_PLACEHOLDER}"
            ),
            requirements: lines(&[
                "The final script must use success() as the metric",
                "Contains a sequence of actions",
                "Do not cheat or reference other tasks",
            ]),
            guidelines: lines(&["Follow the ReAct cycle", "Keep the final script simple"]),
            output: lines(&[
                "meta.json: success status and num_tries",
                "episode.episode: final script",
                "trace.jsonl: per-turn trajectory log",
            ]),
        }
    }
}

impl PromptTemplate {
    fn placeholder_count(&self) -> usize {
        let count = |s: &str| s.matches(TASK_PLACEHOLDER).count();
        count(&self.instruction)
            + self
                .requirements
                .iter()
                .chain(&self.guidelines)
                .chain(&self.output)
                .map(|s| count(s))
                .sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        match self.placeholder_count() {
            1 => Ok(()),
            n => Err(TemplateError::Placeholder(n)),
        }
    }
}

/// Fills the template with the task instruction; appends the coaching block
/// only when tips are given.
pub fn render_prompt(
    task: &TaskSpec,
    template: &PromptTemplate,
    coaching: Option<&[String]>,
) -> Result<String, TemplateError> {
    template.validate()?;
    let fill = |s: &str| s.replace(TASK_PLACEHOLDER, &task.instruction);
    let mut out = String::new();
    let _ = writeln!(out, "# Instruction\n{}\n", fill(&template.instruction));
    for (title, items) in [
        ("Requirements", &template.requirements),
        ("Guidelines", &template.guidelines),
        ("Output", &template.output),
    ] {
        let _ = writeln!(out, "## {title}");
        for item in items {
            let _ = writeln!(out, "- {}", fill(item));
        }
        out.push('\n');
    }
    if let Some(tips) = coaching.filter(|t| !t.is_empty()) {
        out.push_str("## Coaching Tips\n");
        for tip in tips {
            let _ = writeln!(out, "- {tip}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub const DOCS_VERSION: &str = "v1";

/// Canned documentation served by `FETCH_DOC`.
pub fn fetch_doc(key: &str) -> Option<&'static str> {
    match key {
        "env-api" => Some(
            "env-api v1\n\
             reset(task, seed) -> observation: samples the scene; gripper at home (0, 0, 0.3), open.\n\
             step(action) -> observation: move_to drives the end effector to an absolute pose in \
             steps of at most 0.02 m per tick; arrival has small random error.\n\
             get_obs() -> observation: gripper pose, gripper open flag, held object, object poses, goal marker, tick.\n\
             check_success() -> bool: the task's success predicate on the current state.\n",
        ),
        "dsl-grammar" => Some(
            "dsl-grammar v1\n\
             one statement per line; '#' starts a comment\n\
             move_to <x> <y> <z> [yaw]   absolute end-effector target in meters/radians\n\
             gripper open|close          close grasps the nearest object within 0.015 m\n\
             wait <ticks>                positive integer\n\
             numbers are plain decimals; the workspace is x,y in [-0.6, 0.6], z in [0, 0.6]\n",
        ),
        "success-criteria" => Some(
            "success-criteria v1\n\
             pick: object within 0.015 m of the goal in x/y and above 0.1 m\n\
             push/pull/place: object resting within 0.015 m of the goal in x/y\n\
             stack: upper cube resting on the lower cube, centered within 0.015 m\n\
             insertion: peg axis within 0.001 m of the socket axis at insertion depth\n",
        ),
        _ => None,
    }
}

/// Everything a reasoner may condition on in one turn.
#[derive(Debug, Clone, Copy)]
pub struct TurnInput<'a> {
    pub turn: u32,
    pub task: &'a TaskSpec,
    pub prompt: &'a str,
    pub initial_obs: &'a Observation,
    pub context: &'a Context,
    /// Results of the previous turn's calls, in dispatch order.
    pub last_results: &'a [ToolResult],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasonerReply {
    pub calls: Vec<ToolCall>,
    /// Output tokens reported by the backend; `None` means synthetic accounting.
    pub tokens_out: Option<u64>,
}

impl ReasonerReply {
    pub fn one(call: ToolCall) -> Self {
        Self {
            calls: alloc::vec![call],
            tokens_out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnFailure {
    pub message: String,
    pub tokens_out: Option<u64>,
}

impl TurnFailure {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            tokens_out: None,
        }
    }
}

/// A source of tool calls. Implementations see only the turn input; they have
/// no handle on the environment.
pub trait Reasoner {
    fn respond(&mut self, input: &TurnInput<'_>) -> Result<ReasonerReply, TurnFailure>;
}

impl<R: Reasoner + ?Sized> Reasoner for &mut R {
    fn respond(&mut self, input: &TurnInput<'_>) -> Result<ReasonerReply, TurnFailure> {
        (**self).respond(input)
    }
}

impl<R: Reasoner + ?Sized> Reasoner for alloc::boxed::Box<R> {
    fn respond(&mut self, input: &TurnInput<'_>) -> Result<ReasonerReply, TurnFailure> {
        (**self).respond(input)
    }
}

/// Monotonic millisecond clock.
pub trait Clock {
    fn now_ms(&mut self) -> u64;
}

/// Clock that never advances; keeps wall times out of deterministic tests.
#[derive(Debug, Default, Clone, Copy)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now_ms(&mut self) -> u64 {
        0
    }
}

/// Kind column of a trace record: a tool call, or a turn that produced none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RecordKind {
    Tool(ToolKind),
    TurnFailed,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Tool(k) => k.as_str(),
            RecordKind::TurnFailed => "TURN_FAILED",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "TURN_FAILED" {
            return Some(RecordKind::TurnFailed);
        }
        ToolKind::parse(s).map(RecordKind::Tool)
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub turn: u32,
    pub kind: RecordKind,
    pub name: String,
    pub payload: String,
    pub ok: bool,
    pub result_summary: String,
    pub wall_ms: u64,
    /// Observation-sequence digest for executions.
    pub obs_digest: Option<String>,
}

impl TraceRecord {
    pub fn payload_hash(&self) -> String {
        sha256_hex(self.payload.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndReason {
    Finished,
    FinishRejected,
    GaveUp,
    TrialCap,
    MaxTurns,
}

impl EndReason {
    pub fn as_str(self) -> &'static str {
        match self {
            EndReason::Finished => "finished",
            EndReason::FinishRejected => "finish_rejected",
            EndReason::GaveUp => "gave_up",
            EndReason::TrialCap => "trial_cap",
            EndReason::MaxTurns => "max_turns",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub task_id: String,
    pub seed: u64,
    pub success: bool,
    pub num_tries: u32,
    pub num_turns: u32,
    pub final_script: Option<EpisodeScript>,
    pub context: Context,
    pub ledger: ResourceLedger,
    pub records: Vec<TraceRecord>,
    pub end: EndReason,
}

/// Per-run knobs beyond the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub policy: RunPolicy,
    pub seed: u64,
    pub template: PromptTemplate,
    pub coaching: Option<Vec<String>>,
    /// A solved script from another task shown as an example.
    pub exemplar: Option<String>,
    pub char_budget: usize,
    pub ledger: ResourceLedger,
}

impl RunConfig {
    pub fn new(policy: RunPolicy, seed: u64) -> Self {
        Self {
            policy,
            seed,
            template: PromptTemplate::default(),
            coaching: None,
            exemplar: None,
            char_budget: DEFAULT_CHAR_BUDGET,
            ledger: ResourceLedger::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Contract(#[from] ContractError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("initial reset failed: {0}")]
    Reset(EnvError),
}

/// `ceil(chars / 4)`: token estimate for reasoners that report none.
pub fn synthetic_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

fn reply_text(calls: &[ToolCall]) -> String {
    let mut s = String::new();
    for c in calls {
        let _ = writeln!(s, "{} {}\n{}", c.kind, c.name, c.payload);
    }
    s
}

fn render_scene(obs: &Observation) -> String {
    let mut s = String::from("## Scene\n");
    let _ = writeln!(
        s,
        "gripper {} {}",
        obs.gripper_pose,
        if obs.gripper_open { "open" } else { "closed" }
    );
    for (id, p) in &obs.objects {
        let _ = writeln!(s, "{id} {p}");
    }
    let _ = writeln!(s, "goal {}", obs.goal);
    s
}

/// Full text of one attempt as the reasoner sees it.
pub fn render_attempt(rec: &AttemptRecord) -> String {
    Context::new(usize::MAX)
        .append(rec.clone())
        .map(|c| c.render())
        .unwrap_or_default()
}

fn render_trace(trace: &Trace) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "initial: {}", trace.initial);
    for (i, r) in trace.records.iter().enumerate() {
        let _ = writeln!(s, "{} {:?} -> {}", i + 1, r.action, r.post);
    }
    let _ = writeln!(
        s,
        "success: {}{}",
        trace.outcome.success,
        trace
            .outcome
            .error
            .as_ref()
            .map(|e| format!(" (error: {e})"))
            .unwrap_or_default()
    );
    s
}

struct Run<'a, E: Environment + ?Sized> {
    task: &'a TaskSpec,
    env: &'a mut E,
    seed: u64,
    initial_obs: Observation,
    scripts: BTreeMap<String, EpisodeScript>,
    artifacts: BTreeMap<String, String>,
    executed: BTreeSet<String>,
    context: Context,
    ledger: ResourceLedger,
    tries: u32,
    last_exec_success: bool,
    last_script: Option<EpisodeScript>,
    end: Option<(EndReason, bool, Option<EpisodeScript>)>,
}

struct Dispatched {
    result: ToolResult,
    obs_digest: Option<String>,
}

impl<E: Environment + ?Sized> Run<'_, E> {
    fn fail(call: &ToolCall, msg: impl Into<String>) -> Dispatched {
        Dispatched {
            result: ToolResult {
                kind: call.kind,
                name: call.name.clone(),
                ok: false,
                summary: msg.into(),
            },
            obs_digest: None,
        }
    }

    fn ok(call: &ToolCall, summary: impl Into<String>) -> Dispatched {
        Dispatched {
            result: ToolResult {
                kind: call.kind,
                name: call.name.clone(),
                ok: true,
                summary: summary.into(),
            },
            obs_digest: None,
        }
    }

    /// Reset to the run seed and execute. Environment errors become an errored
    /// outcome rather than aborting the run.
    fn run_script(&mut self, script: &EpisodeScript) -> Trace {
        let attempt = self
            .env
            .reset(self.task, self.seed)
            .and_then(|_| dsl::execute(script, &mut *self.env));
        match attempt {
            Ok(t) => t,
            Err(e) => Trace {
                initial: self.initial_obs.clone(),
                records: Vec::new(),
                outcome: crate::domain::Outcome::new(
                    false,
                    Some(e.to_string()),
                    self.initial_obs.clone(),
                ),
            },
        }
    }

    fn dispatch(&mut self, call: &ToolCall, cap: Option<u32>) -> Dispatched {
        if let Err(msg) = call.validate() {
            return Self::fail(call, msg);
        }
        match call.kind {
            ToolKind::WriteScript => match dsl::parse(&call.payload) {
                Ok(script) => {
                    let n = script.len();
                    self.scripts.insert(call.name.clone(), script);
                    self.artifacts
                        .insert(call.name.clone(), call.payload.clone());
                    Self::ok(call, format!("stored {} ({n} statements)", call.name))
                }
                Err(e) => Self::fail(call, format!("parse error: {e}")),
            },
            ToolKind::ExecScript => {
                let Some(script) = self.scripts.get(&call.name).cloned() else {
                    return Self::fail(call, format!("no script named '{}'", call.name));
                };
                if cap.is_some_and(|c| self.tries >= c) {
                    return Self::fail(call, "trial cap reached");
                }
                if self.ledger.tries >= self.ledger.turns {
                    return Self::fail(call, "one execution per turn");
                }
                let trace = self.run_script(&script);
                self.tries += 1;
                self.ledger = self
                    .ledger
                    .record(LedgerEvent::Try)
                    .expect("every try happens inside a turn");
                let rec = AttemptRecord {
                    index: self.context.next_index(),
                    script: script.clone(),
                    observations: trace.summary(),
                    outcome: trace.outcome.clone(),
                };
                let summary = render_attempt(&rec);
                self.context = self
                    .context
                    .append(rec)
                    .expect("indices come from next_index");
                self.artifacts
                    .insert(format!("{}.trace", call.name), render_trace(&trace));
                self.executed.insert(call.name.clone());
                self.last_exec_success = trace.outcome.success;
                self.last_script = Some(script);
                let mut d = Self::ok(call, summary);
                d.obs_digest = Some(trace.obs_digest());
                d
            }
            ToolKind::Read => match self.artifacts.get(&call.name) {
                Some(text) => Self::ok(call, text.clone()),
                None => Self::fail(call, format!("no artifact named '{}'", call.name)),
            },
            ToolKind::FetchDoc => match fetch_doc(&call.name) {
                Some(doc) => Self::ok(call, doc),
                None => Self::fail(call, format!("no documentation for '{}'", call.name)),
            },
            ToolKind::Finish => {
                let Some(script) = self.scripts.get(&call.name).cloned() else {
                    return Self::fail(call, format!("no script named '{}'", call.name));
                };
                let trace = self.run_script(&script);
                let verified = trace.outcome.success;
                let reason = if verified {
                    EndReason::Finished
                } else {
                    EndReason::FinishRejected
                };
                self.end = Some((reason, verified, Some(script)));
                let mut d = if verified {
                    Self::ok(call, "verified: re-execution succeeded")
                } else {
                    Self::fail(call, "rejected: re-execution did not succeed")
                };
                d.obs_digest = Some(trace.obs_digest());
                d
            }
            ToolKind::GiveUp => {
                self.end = Some((EndReason::GaveUp, false, None));
                Self::ok(call, "run ended by reasoner")
            }
        }
    }
}

/// Drives one task to completion.
pub fn run_task<E, R, C>(
    task: &TaskSpec,
    reasoner: &mut R,
    config: &RunConfig,
    env: &mut E,
    clock: &mut C,
) -> Result<RunResult, RunError>
where
    E: Environment + ?Sized,
    R: Reasoner + ?Sized,
    C: Clock + ?Sized,
{
    task.validate()?;
    let policy = RunPolicy::new(
        config.policy.condition,
        config.policy.trial_cap,
        config.policy.max_turns,
    )?;
    let started = clock.now_ms();
    let initial_obs = env.reset(task, config.seed).map_err(RunError::Reset)?;

    let mut base_prompt = render_prompt(task, &config.template, config.coaching.as_deref())?;
    let mut ledger = config.ledger.clone();
    if let Some(ex) = &config.exemplar {
        let _ = write!(base_prompt, "## Example\n```\n{ex}```\n\n");
        ledger = ledger
            .record(LedgerEvent::Tokens(synthetic_tokens(ex) as i64))
            .expect("token counts are non-negative");
    }
    base_prompt.push_str(&render_scene(&initial_obs));

    let mut run = Run {
        task,
        env,
        seed: config.seed,
        initial_obs,
        scripts: BTreeMap::new(),
        artifacts: BTreeMap::new(),
        executed: BTreeSet::new(),
        context: Context::new(config.char_budget),
        ledger,
        tries: 0,
        last_exec_success: false,
        last_script: None,
        end: None,
    };
    let mut records: Vec<TraceRecord> = Vec::new();
    let mut last_results: Vec<ToolResult> = Vec::new();
    let mut turns = 0u32;
    let mut end_reason = EndReason::MaxTurns;

    while turns < policy.max_turns {
        turns += 1;
        let turn_start = clock.now_ms();
        run.ledger = run
            .ledger
            .record(LedgerEvent::Turn)
            .expect("turn count fits");

        let history = run.context.render();
        let prompt = if history.is_empty() {
            base_prompt.clone()
        } else {
            format!("{base_prompt}\n## Attempt History\n{history}")
        };
        let input = TurnInput {
            turn: turns,
            task,
            prompt: &prompt,
            initial_obs: &run.initial_obs,
            context: &run.context,
            last_results: &last_results,
        };
        let reply = reasoner.respond(&input);
        let mut results = Vec::new();
        match reply {
            Err(failure) => {
                let tokens = failure.tokens_out.unwrap_or(0);
                run.ledger = run
                    .ledger
                    .record(LedgerEvent::Tokens(tokens as i64))
                    .expect("token counts are non-negative");
                records.push(TraceRecord {
                    turn: turns,
                    kind: RecordKind::TurnFailed,
                    name: String::new(),
                    payload: String::new(),
                    ok: false,
                    result_summary: failure.message.clone(),
                    wall_ms: clock.now_ms().saturating_sub(turn_start),
                    obs_digest: None,
                });
            }
            Ok(reply) => {
                let tokens = reply
                    .tokens_out
                    .unwrap_or_else(|| synthetic_tokens(&reply_text(&reply.calls)));
                run.ledger = run
                    .ledger
                    .record(LedgerEvent::Tokens(tokens as i64))
                    .expect("token counts are non-negative");
                if reply.calls.is_empty() {
                    records.push(TraceRecord {
                        turn: turns,
                        kind: RecordKind::TurnFailed,
                        name: String::new(),
                        payload: String::new(),
                        ok: false,
                        result_summary: "reply contained no tool call".into(),
                        wall_ms: clock.now_ms().saturating_sub(turn_start),
                        obs_digest: None,
                    });
                }
                for (i, call) in reply.calls.iter().enumerate() {
                    // the first call of a turn also carries the reasoner's latency
                    let call_start = if i == 0 { turn_start } else { clock.now_ms() };
                    run.ledger = run
                        .ledger
                        .record(LedgerEvent::Tool(call.kind))
                        .expect("tool count fits");
                    let d = run.dispatch(call, policy.trial_cap);
                    records.push(TraceRecord {
                        turn: turns,
                        kind: RecordKind::Tool(call.kind),
                        name: call.name.clone(),
                        payload: call.payload.clone(),
                        ok: d.result.ok,
                        result_summary: d.result.summary.clone(),
                        wall_ms: clock.now_ms().saturating_sub(call_start),
                        obs_digest: d.obs_digest,
                    });
                    results.push(d.result);
                    if run.end.is_some() {
                        break;
                    }
                }
            }
        }
        last_results = results;

        if let Some((reason, _, _)) = &run.end {
            end_reason = *reason;
            break;
        }
        if policy
            .trial_cap
            .is_some_and(|c| run.tries >= c && !run.last_exec_success)
        {
            end_reason = EndReason::TrialCap;
            break;
        }
    }

    let (success, final_script) = match run.end.take() {
        Some((_, verified, Some(script))) => (verified, Some(script)),
        Some((_, verified, None)) => (verified, run.last_script.clone()),
        None => (false, run.last_script.clone()),
    };
    let elapsed = clock.now_ms().saturating_sub(started);
    let ledger = run
        .ledger
        .record(LedgerEvent::Wall(elapsed as i64))
        .expect("elapsed time is non-negative");

    Ok(RunResult {
        task_id: task.id.clone(),
        seed: config.seed,
        success,
        num_tries: run.tries,
        num_turns: turns,
        final_script,
        context: run.context,
        ledger,
        records,
        end: end_reason,
    })
}
