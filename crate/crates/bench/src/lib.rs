//! Std companion to `scriptloop-core`: artifact files, configuration, the
//! bridge client, the HTTP reasoner, suites, replay and reports.

pub mod artifacts;
pub mod config;
pub mod llm;
pub mod report;
pub mod run;
pub mod suite;
pub mod wire;
