//! Attempt history accumulated across a run and its prompt rendering.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::domain::Outcome;
use crate::dsl::{EpisodeScript, ObservationSummary};
use crate::error::ContractError;

pub const DEFAULT_CHAR_BUDGET: usize = 8000;

/// One executed script with what was observed and how it ended.
#[derive(Debug, Clone, PartialEq)]
pub struct AttemptRecord {
    /// 1-based attempt number.
    pub index: u32,
    pub script: EpisodeScript,
    pub observations: ObservationSummary,
    pub outcome: Outcome,
}

impl AttemptRecord {
    fn render_full(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "### Attempt {}", self.index);
        s.push_str("script:\n");
        s.push_str(&self.script.to_string());
        let _ = writeln!(s, "initial: {}", self.observations.initial);
        let _ = writeln!(s, "terminal: {}", self.observations.terminal);
        if let Some(note) = &self.observations.divergence {
            let _ = writeln!(s, "note: {note}");
        }
        let _ = writeln!(s, "outcome: {}", self.outcome_line());
        s
    }

    fn render_compact(&self) -> String {
        format!("### Attempt {}: {}\n", self.index, self.outcome_line())
    }

    fn outcome_line(&self) -> String {
        match (&self.outcome.error, self.outcome.success) {
            (_, true) => "success".into(),
            (Some(e), false) => format!("failure (error: {e})"),
            (None, false) => "failure".into(),
        }
    }
}

/// Ordered attempt history. Values are immutable: `append` returns a new context.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    attempts: Vec<AttemptRecord>,
    pub char_budget: usize,
}

impl Default for Context {
    fn default() -> Self {
        Self::new(DEFAULT_CHAR_BUDGET)
    }
}

impl Context {
    pub fn new(char_budget: usize) -> Self {
        Self {
            attempts: Vec::new(),
            char_budget: char_budget.max(1),
        }
    }

    pub fn attempts(&self) -> &[AttemptRecord] {
        &self.attempts
    }

    pub fn last(&self) -> Option<&AttemptRecord> {
        self.attempts.last()
    }

    pub fn len(&self) -> usize {
        self.attempts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attempts.is_empty()
    }

    pub fn next_index(&self) -> u32 {
        self.attempts.last().map_or(1, |a| a.index + 1)
    }

    pub fn append(&self, rec: AttemptRecord) -> Result<Context, ContractError> {
        let expected = self.next_index();
        if rec.index != expected {
            return Err(ContractError::AttemptIndex {
                expected,
                got: rec.index,
            });
        }
        let mut attempts = self.attempts.clone();
        attempts.push(rec);
        Ok(Context {
            attempts,
            char_budget: self.char_budget,
        })
    }

    /// Renders every attempt in full, then compacts the oldest ones to a single
    /// outcome line until the text fits the budget. The newest attempt is never
    /// compacted.
    pub fn render(&self) -> String {
        let Some((newest, older)) = self.attempts.split_last() else {
            return String::new();
        };
        let mut parts: Vec<String> = older.iter().map(AttemptRecord::render_full).collect();
        let newest_text = newest.render_full();
        let mut total: usize = parts.iter().map(|p| p.len()).sum::<usize>() + newest_text.len();
        for (i, rec) in older.iter().enumerate() {
            if total <= self.char_budget {
                break;
            }
            let compact = rec.render_compact();
            total = total - parts[i].len() + compact.len();
            parts[i] = compact;
        }
        parts.push(newest_text);
        parts.concat()
    }
}

pub fn context_append(ctx: &Context, rec: AttemptRecord) -> Result<Context, ContractError> {
    ctx.append(rec)
}

pub fn context_render(ctx: &Context) -> String {
    ctx.render()
}
