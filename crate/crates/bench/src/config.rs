//! TOML configuration with environment-variable overrides.
//!
//! ```toml
//! [llm]
//! endpoint = "http://localhost:8000/v1/chat/completions"
//! model = "some-model"
//! max_tokens = 4096
//! timeout_ms = 60000
//! retries = 3
//! backoff_ms = 500
//!
//! [cost]
//! rate_usd = "0.00001"    # per output token; a string keeps it exact
//!
//! [audit]
//! min_execs = 100
//! lattice_ratio = 0.8
//! max_steps = 3
//!
//! [run]
//! max_turns = 200
//! char_budget = 8000
//! ```
//!
//! `SCRIPTLOOP_LLM_ENDPOINT`, `SCRIPTLOOP_LLM_MODEL`, `SCRIPTLOOP_API_KEY` and
//! `SCRIPTLOOP_COST_RATE` override the file. The API key is read only from
//! the environment or the file's `llm.api_key`.

use std::path::Path;
use std::str::FromStr;

use rust_decimal::Decimal;
use scriptloop_core::audit::AuditConfig;
use scriptloop_core::context::DEFAULT_CHAR_BUDGET;
use scriptloop_core::engine::DEFAULT_MAX_TURNS;
use scriptloop_core::ledger::DEFAULT_RATE_USD;
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    File { path: String, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: None,
            api_key: None,
            max_tokens: 4096,
            timeout_ms: 60_000,
            retries: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CostSection {
    rate_usd: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AuditSection {
    min_execs: usize,
    lattice_ratio: f64,
    max_steps: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        let d = AuditConfig::default();
        Self {
            min_execs: d.min_execs,
            lattice_ratio: d.lattice_ratio,
            max_steps: d.max_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunSection {
    max_turns: u32,
    char_budget: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            max_turns: DEFAULT_MAX_TURNS,
            char_budget: DEFAULT_CHAR_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    llm: LlmConfig,
    cost: CostSection,
    audit: AuditSection,
    run: RunSection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub llm: LlmConfig,
    pub rate_usd: Decimal,
    pub audit: AuditConfig,
    pub max_turns: u32,
    pub char_budget: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self::from_file(FileConfig::default(), |_| None).expect("defaults are valid")
    }
}

impl Config {
    pub fn parse(text: &str, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let file: FileConfig = toml::from_str(text).map_err(|e| ConfigError::File {
            path: "<config>".into(),
            msg: e.to_string(),
        })?;
        Self::from_file(file, env)
    }

    /// Reads `path` if given, then applies process environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::File {
                path: p.display().to_string(),
                msg: e.to_string(),
            })?,
            None => String::new(),
        };
        Self::parse(&text, |k| std::env::var(k).ok()).map_err(|e| match (e, path) {
            (ConfigError::File { msg, .. }, Some(p)) => ConfigError::File {
                path: p.display().to_string(),
                msg,
            },
            (e, _) => e,
        })
    }

    fn from_file(f: FileConfig, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut llm = f.llm;
        if let Some(v) = env("SCRIPTLOOP_LLM_ENDPOINT") {
            llm.endpoint = Some(v);
        }
        if let Some(v) = env("SCRIPTLOOP_LLM_MODEL") {
            llm.model = Some(v);
        }
        if let Some(v) = env("SCRIPTLOOP_API_KEY") {
            llm.api_key = Some(v);
        }
        let rate_text = env("SCRIPTLOOP_COST_RATE").or(f.cost.rate_usd);
        let rate_usd = match rate_text {
            Some(t) => Decimal::from_str(t.trim())
                .map_err(|e| ConfigError::Invalid(format!("cost rate '{t}': {e}")))?,
            None => DEFAULT_RATE_USD,
        };
        if rate_usd.is_sign_negative() {
            return Err(ConfigError::Invalid(
                "cost rate must be non-negative".into(),
            ));
        }
        if llm.retries == 0 {
            return Err(ConfigError::Invalid(
                "llm.retries must be at least 1".into(),
            ));
        }
        let audit = AuditConfig {
            min_execs: f.audit.min_execs,
            lattice_ratio: f.audit.lattice_ratio,
            max_steps: f.audit.max_steps,
            ..AuditConfig::default()
        };
        if !(0.0..=1.0).contains(&audit.lattice_ratio) || audit.max_steps == 0 {
            return Err(ConfigError::Invalid(
                "audit.lattice_ratio must be in [0, 1] and audit.max_steps positive".into(),
            ));
        }
        if f.run.max_turns == 0 {
            return Err(ConfigError::Invalid(
                "run.max_turns must be positive".into(),
            ));
        }
        Ok(Self {
            llm,
            rate_usd,
            audit,
            max_turns: f.run.max_turns,
            char_budget: f.run.char_budget.max(1),
        })
    }
}
