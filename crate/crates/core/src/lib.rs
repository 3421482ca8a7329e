//! Core of a demonstration-free manipulation harness.
//!
//! A reasoner writes open-loop episode scripts, the harness executes them in a
//! seeded kinematic tabletop simulator, and every attempt's script, observations
//! and outcome are fed back as context for the next one. Runs end on verified
//! success, an explicit give-up, or a trial/turn budget.
//!
//! This crate is `no_std` (with `alloc`) and performs no IO; file formats, the
//! HTTP reasoner, the remote environment client and the CLI live in the
//! `scriptloop` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod audit;
pub mod context;
pub mod digest;
pub mod domain;
pub mod dsl;
pub mod engine;
pub mod error;
pub mod ledger;
pub mod planner;
pub mod reasoners;
pub mod sim;
pub mod task;

pub use context::{AttemptRecord, Context};
pub use domain::{Action, Grip, Observation, Outcome, Pose};
pub use dsl::{execute, parse, serialize, EpisodeScript, ParseError, Trace};
pub use engine::{
    render_prompt, run_task, Clock, PromptTemplate, Reasoner, RunPolicy, RunResult, ToolCall,
    ToolKind,
};
pub use error::{ContractError, EnvError};
pub use ledger::ResourceLedger;
pub use sim::{ControlParams, Environment, Sim};
pub use task::{catalog, find_task, Family, TaskSpec};
