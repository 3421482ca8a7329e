//! Per-run artifact files and their schemas.
//!
//! A run directory holds exactly four files:
//!
//! - `meta.json`: outcome and resource summary ([`Meta`]). Contains no wall
//!   times, so deterministic reasoners reproduce it byte for byte.
//! - `episode.episode`: the final script in canonical DSL text (empty when the
//!   run produced none).
//! - `trace.jsonl`: one [`TraceLine`] per dispatched call or failed turn.
//! - `validation.json`: the audit verdict ([`Validation`]).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use scriptloop_core::audit::{Flag, ValidationReport};
use scriptloop_core::digest::sha256_hex;
use scriptloop_core::engine::{RecordKind, TraceRecord};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const EPISODE_FILE: &str = "episode.episode";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const VALIDATION_FILE: &str = "validation.json";

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("missing artifact {0}")]
    Missing(PathBuf),
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagEntry {
    pub kind: String,
    pub evidence: String,
}

impl From<&Flag> for FlagEntry {
    fn from(f: &Flag) -> Self {
        Self {
            kind: f.kind().into(),
            evidence: f.to_string(),
        }
    }
}

/// `meta.json`. Field order is the serialization order and is frozen for
/// `schema_version` 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub schema_version: u32,
    pub task: String,
    pub seed: u64,
    pub condition: String,
    pub reasoner: String,
    pub category: String,
    /// Reported success: raw success with a CLEAN audit.
    pub success: bool,
    /// What the verified FINISH established, regardless of audit.
    pub raw_success: bool,
    pub num_tries: u32,
    pub num_turns: u32,
    pub end_reason: String,
    pub flags: Vec<FlagEntry>,
    pub tokens_out: u64,
    /// USD per output token, exact decimal.
    pub cost_rate_usd: String,
    pub cost_usd: String,
    pub tool_counts: BTreeMap<String, u64>,
    pub episode_sha256: String,
}

/// One line of `trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceLine {
    pub turn: u32,
    pub kind: String,
    pub name: String,
    pub payload: String,
    pub payload_hash: String,
    pub ok: bool,
    pub result_summary: String,
    pub wall_ms: u64,
    pub obs_digest: Option<String>,
}

impl From<&TraceRecord> for TraceLine {
    fn from(r: &TraceRecord) -> Self {
        Self {
            turn: r.turn,
            kind: r.kind.as_str().into(),
            name: r.name.clone(),
            payload: r.payload.clone(),
            payload_hash: r.payload_hash(),
            ok: r.ok,
            result_summary: r.result_summary.clone(),
            wall_ms: r.wall_ms,
            obs_digest: r.obs_digest.clone(),
        }
    }
}

impl TraceLine {
    pub fn to_record(&self) -> Result<TraceRecord, String> {
        let kind =
            RecordKind::parse(&self.kind).ok_or_else(|| format!("unknown kind '{}'", self.kind))?;
        if sha256_hex(self.payload.as_bytes()) != self.payload_hash {
            return Err("payload_hash does not match payload".into());
        }
        Ok(TraceRecord {
            turn: self.turn,
            kind,
            name: self.name.clone(),
            payload: self.payload.clone(),
            ok: self.ok,
            result_summary: self.result_summary.clone(),
            wall_ms: self.wall_ms,
            obs_digest: self.obs_digest.clone(),
        })
    }
}

/// `validation.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Validation {
    pub schema_version: u32,
    pub run_id: String,
    pub verdict: String,
    pub flags: Vec<FlagEntry>,
}

impl From<&ValidationReport> for Validation {
    fn from(r: &ValidationReport) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            run_id: r.run_id.clone(),
            verdict: r.verdict.as_str().into(),
            flags: r.flags.iter().map(FlagEntry::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunArtifacts {
    pub meta: Meta,
    pub episode: String,
    pub trace: Vec<TraceLine>,
    pub validation: Validation,
}

pub fn run_dir(out: &Path, task: &str, seed: u64) -> PathBuf {
    out.join(task).join(format!("seed_{seed}"))
}

/// `<task>/seed_<n>`, the run's id in reports.
pub fn run_id(task: &str, seed: u64) -> String {
    format!("{task}/seed_{seed}")
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifact types serialize");
    s.push('\n');
    s
}

pub fn trace_to_jsonl(lines: &[TraceLine]) -> String {
    let mut s = String::new();
    for l in lines {
        s.push_str(&serde_json::to_string(l).expect("trace lines serialize"));
        s.push('\n');
    }
    s
}

fn write(path: &Path, text: &str) -> Result<(), ArtifactError> {
    fs::write(path, text).map_err(io(path))
}

pub fn write_run(dir: &Path, a: &RunArtifacts) -> Result<(), ArtifactError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    write(&dir.join(EPISODE_FILE), &a.episode)?;
    write(&dir.join(TRACE_FILE), &trace_to_jsonl(&a.trace))?;
    write(&dir.join(VALIDATION_FILE), &to_json(&a.validation))?;
    write(&dir.join(META_FILE), &to_json(&a.meta))
}

fn read(path: &Path) -> Result<String, ArtifactError> {
    if !path.is_file() {
        return Err(ArtifactError::Missing(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(io(path))
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ArtifactError> {
    serde_json::from_str(&read(path)?).map_err(|e| ArtifactError::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn read_meta(dir: &Path) -> Result<Meta, ArtifactError> {
    let path = dir.join(META_FILE);
    let meta: Meta = from_json(&path)?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(ArtifactError::Invalid(format!(
            "{}: schema_version {} is not {SCHEMA_VERSION}",
            path.display(),
            meta.schema_version
        )));
    }
    Ok(meta)
}

pub fn read_validation(dir: &Path) -> Result<Validation, ArtifactError> {
    from_json(&dir.join(VALIDATION_FILE))
}

pub fn read_episode(dir: &Path) -> Result<String, ArtifactError> {
    read(&dir.join(EPISODE_FILE))
}

/// Parses a trace log. A log is rejected when a line is not a complete
/// record, a payload hash does not verify, turns are not consecutive from 1,
/// or the final line lacks its terminating newline (a truncated write).
pub fn parse_trace(path: &Path, text: &str) -> Result<Vec<TraceLine>, ArtifactError> {
    let bad = |line: usize, msg: String| ArtifactError::Malformed {
        path: path.to_path_buf(),
        line,
        msg,
    };
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(bad(text.lines().count(), "truncated final line".into()));
    }
    let mut out: Vec<TraceLine> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line: TraceLine = serde_json::from_str(raw).map_err(|e| bad(n, e.to_string()))?;
        line.to_record().map_err(|m| bad(n, m))?;
        let prev = out.last().map_or(0, |l| l.turn);
        if !(line.turn == prev || line.turn == prev + 1) || line.turn == 0 {
            return Err(bad(n, format!("turn {} follows turn {prev}", line.turn)));
        }
        out.push(line);
    }
    Ok(out)
}

pub fn read_trace(dir: &Path) -> Result<Vec<TraceLine>, ArtifactError> {
    let path = dir.join(TRACE_FILE);
    parse_trace(&path, &read(&path)?)
}

pub fn records(lines: &[TraceLine]) -> Vec<TraceRecord> {
    lines
        .iter()
        .map(|l| l.to_record().expect("lines are verified on load"))
        .collect()
}

pub fn read_run(dir: &Path) -> Result<RunArtifacts, ArtifactError> {
    Ok(RunArtifacts {
        meta: read_meta(dir)?,
        episode: read_episode(dir)?,
        trace: read_trace(dir)?,
        validation: read_validation(dir)?,
    })
}

/// Every directory under `out` that holds a `meta.json`, sorted.
pub fn find_runs(out: &Path) -> Result<Vec<PathBuf>, ArtifactError> {
    let mut found = Vec::new();
    let mut stack = vec![out.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(io(&d))? {
            let p = entry.map_err(io(&d))?.path();
            if p.is_dir() {
                if p.join(META_FILE).is_file() {
                    found.push(p);
                } else {
                    stack.push(p);
                }
            }
        }
    }
    found.sort();
    Ok(found)
}
