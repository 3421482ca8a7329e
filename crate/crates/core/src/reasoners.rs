//! Deterministic reasoners used as baselines, ablations and for replay.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::domain::Observation;
use crate::dsl::{serialize, EpisodeScript};
use crate::engine::{Reasoner, ReasonerReply, ToolCall, ToolKind, TurnFailure, TurnInput};
use crate::planner::{oracle_plan, perturb, waypoint_plan, PlanError};
use crate::task::TaskSpec;

type Planner = fn(&TaskSpec, &Observation) -> Result<EpisodeScript, PlanError>;

/// True when the previous turn executed a script and it succeeded.
fn last_exec_succeeded(input: &TurnInput<'_>) -> Option<String> {
    let exec = input
        .last_results
        .iter()
        .rev()
        .find(|r| r.kind == ToolKind::ExecScript && r.ok)?;
    let won = input.context.last().is_some_and(|a| a.outcome.success);
    won.then(|| exec.name.clone())
}

fn write_and_exec(name: String, script: &EpisodeScript) -> ReasonerReply {
    ReasonerReply {
        calls: alloc::vec![
            ToolCall::write(name.clone(), serialize(script)),
            ToolCall::exec(name)
        ],
        tokens_out: None,
    }
}

/// Writes the analytic plan, executes it, and finishes once an execution
/// succeeds. Gives up when replanning would only repeat a failed script.
#[derive(Debug, Clone, Copy)]
pub struct OracleReasoner {
    planner: Planner,
}

impl OracleReasoner {
    /// Plans with [`oracle_plan`]; gives up on insertion tasks.
    pub fn oracle() -> Self {
        Self {
            planner: oracle_plan,
        }
    }

    /// Plans with [`waypoint_plan`], which attempts insertion from the coarse goal.
    pub fn waypoint() -> Self {
        Self {
            planner: waypoint_plan,
        }
    }
}

impl Reasoner for OracleReasoner {
    fn respond(&mut self, input: &TurnInput<'_>) -> Result<ReasonerReply, TurnFailure> {
        if let Some(name) = last_exec_succeeded(input) {
            return Ok(ReasonerReply::one(ToolCall::finish(
                name,
                "execution succeeded",
            )));
        }
        let plan = match (self.planner)(input.task, input.initial_obs) {
            Ok(p) => p,
            Err(e) => return Ok(ReasonerReply::one(ToolCall::give_up(format!("{e}")))),
        };
        if input.context.last().is_some_and(|a| a.script == plan) {
            return Ok(ReasonerReply::one(ToolCall::give_up(
                "the only available plan already failed",
            )));
        }
        let name = format!("attempt_{}.episode", input.context.next_index());
        Ok(write_and_exec(name, &plan))
    }
}

/// Oracle plan shifted by a per-attempt offset: attempt `k` (0-based) uses
/// `schedule[k]`, or no offset once the schedule is exhausted.
#[derive(Debug, Clone)]
pub struct NoisyReasoner {
    schedule: Vec<[f64; 3]>,
}

impl NoisyReasoner {
    pub fn new(schedule: Vec<[f64; 3]>) -> Self {
        Self { schedule }
    }

    /// Height offsets that converge on the plan over `len` attempts: every
    /// attempt before the last approaches `step` higher than its successor.
    pub fn converging(len: usize, step: f64) -> Self {
        let schedule = (0..len)
            .map(|k| {
                let remaining = (len - 1 - k) as f64;
                let dz = if remaining == 0.0 {
                    0.0
                } else {
                    (remaining + 3.0) * step
                };
                [0.0, 0.0, dz]
            })
            .collect();
        Self { schedule }
    }

    pub fn schedule(&self) -> &[[f64; 3]] {
        &self.schedule
    }
}

impl Reasoner for NoisyReasoner {
    fn respond(&mut self, input: &TurnInput<'_>) -> Result<ReasonerReply, TurnFailure> {
        if let Some(name) = last_exec_succeeded(input) {
            return Ok(ReasonerReply::one(ToolCall::finish(
                name,
                "execution succeeded",
            )));
        }
        let plan = match oracle_plan(input.task, input.initial_obs) {
            Ok(p) => p,
            Err(e) => return Ok(ReasonerReply::one(ToolCall::give_up(format!("{e}")))),
        };
        let k = input.context.len();
        let delta = self.schedule.get(k).copied().unwrap_or([0.0; 3]);
        let name = format!("attempt_{}.episode", k + 1);
        Ok(write_and_exec(name, &perturb(&plan, delta)))
    }
}

/// Plays back a fixed sequence of turn replies, then gives up.
#[derive(Debug, Clone, Default)]
pub struct ScriptedReasoner {
    turns: VecDeque<Result<ReasonerReply, TurnFailure>>,
}

impl ScriptedReasoner {
    pub fn new(turns: impl IntoIterator<Item = Result<ReasonerReply, TurnFailure>>) -> Self {
        Self {
            turns: turns.into_iter().collect(),
        }
    }

    /// One turn per inner vector of calls.
    pub fn from_calls(turns: impl IntoIterator<Item = Vec<ToolCall>>) -> Self {
        Self::new(turns.into_iter().map(|calls| {
            Ok(ReasonerReply {
                calls,
                tokens_out: None,
            })
        }))
    }

    pub fn remaining(&self) -> usize {
        self.turns.len()
    }
}

impl Reasoner for ScriptedReasoner {
    fn respond(&mut self, _input: &TurnInput<'_>) -> Result<ReasonerReply, TurnFailure> {
        self.turns.pop_front().unwrap_or_else(|| {
            Ok(ReasonerReply::one(ToolCall::give_up(
                "replay log exhausted",
            )))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converging_schedule_ends_at_zero() {
        let r = NoisyReasoner::converging(12, 0.01);
        let s = r.schedule();
        assert_eq!(s.len(), 12);
        assert!((s[0][2] - 0.14).abs() < 1e-12);
        assert!((s[10][2] - 0.04).abs() < 1e-12);
        assert_eq!(s[11], [0.0; 3]);
    }
}
