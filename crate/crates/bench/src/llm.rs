//! Reasoner backed by an HTTP chat-completion endpoint.
//!
//! Each turn sends one user message: the rendered prompt (task, scene,
//! attempt history), the results of the previous turn's calls, and the reply
//! format. The reply must contain exactly one fenced script block (written
//! and executed as the next attempt), or the token `FINISH` (submit the last
//! executed attempt), or `GIVE_UP`.

use std::fmt::Write as _;
use std::thread;
use std::time::Duration;

use scriptloop_core::engine::{
    Reasoner, ReasonerReply, ToolCall, ToolResult, TurnFailure, TurnInput,
};
use serde_json::{json, Value};

use crate::config::LlmConfig;

pub const REPLY_FORMAT: &str = "## Reply Format\n\
Reply with exactly one fenced code block holding the complete episode script; it is written \
and executed as your next attempt. Reply FINISH to submit the last executed script once it \
succeeded, or GIVE_UP if further attempts are unlikely to succeed.\n";

#[derive(Debug, Clone)]
pub struct LlmReasoner {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    max_tokens: u32,
    retries: u32,
    backoff: Duration,
}

#[derive(Debug, thiserror::Error)]
pub enum LlmSetupError {
    #[error(
        "llm.endpoint is not configured (set it in the config file or SCRIPTLOOP_LLM_ENDPOINT)"
    )]
    NoEndpoint,
    #[error("llm.model is not configured (set it in the config file or SCRIPTLOOP_LLM_MODEL)")]
    NoModel,
}

impl LlmReasoner {
    pub fn new(cfg: &LlmConfig) -> Result<Self, LlmSetupError> {
        let endpoint = cfg.endpoint.clone().ok_or(LlmSetupError::NoEndpoint)?;
        let model = cfg.model.clone().ok_or(LlmSetupError::NoModel)?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint,
            model,
            api_key: cfg.api_key.clone().filter(|k| !k.is_empty()),
            max_tokens: cfg.max_tokens,
            retries: cfg.retries.max(1),
            backoff: Duration::from_millis(cfg.backoff_ms),
        })
    }

    fn request(&self, content: &str) -> Result<(String, Option<u64>), String> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": self.max_tokens,
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        let v: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or("response lacks choices[0].message.content")?
            .to_string();
        let tokens = v
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64);
        Ok((text, tokens))
    }

    /// Up to `retries` attempts with exponential backoff between them.
    fn request_with_retry(&self, content: &str) -> Result<(String, Option<u64>), String> {
        let mut last = String::new();
        for attempt in 0..self.retries {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.request(content) {
                Ok(r) => return Ok(r),
                Err(e) => last = e,
            }
        }
        Err(format!(
            "llm request failed after {} attempts: {last}",
            self.retries
        ))
    }
}

fn render_results(results: &[ToolResult]) -> String {
    if results.is_empty() {
        return String::new();
    }
    let mut s = String::from("## Last Results\n");
    for r in results {
        let status = if r.ok { "ok" } else { "failed" };
        let _ = writeln!(
            s,
            "{} {} ({status}):\n{}",
            r.kind,
            r.name,
            r.summary.trim_end()
        );
    }
    s
}

/// Turn text for one reasoner call.
pub fn turn_message(input: &TurnInput<'_>) -> String {
    format!(
        "{}\n{}\n{REPLY_FORMAT}",
        input.prompt.trim_end(),
        render_results(input.last_results)
    )
}

/// Bodies of the fenced blocks in `text`, or an error for an unclosed fence.
pub fn fenced_blocks(text: &str) -> Result<Vec<String>, String> {
    let mut blocks = Vec::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(body) => blocks.push(body),
                None => current = Some(String::new()),
            }
        } else if let Some(body) = current.as_mut() {
            body.push_str(line);
            body.push('\n');
        }
    }
    if current.is_some() {
        return Err("unterminated code block".into());
    }
    Ok(blocks)
}

/// Maps a reply to tool calls. `attempts` is the number of attempts already
/// executed in the run.
pub fn parse_reply(text: &str, attempts: usize) -> Result<Vec<ToolCall>, String> {
    let blocks = fenced_blocks(text)?;
    match blocks.len() {
        0 => {}
        1 => {
            let name = format!("attempt_{}.episode", attempts + 1);
            return Ok(vec![
                ToolCall::write(name.clone(), blocks[0].clone()),
                ToolCall::exec(name),
            ]);
        }
        _ => return Err("ambiguous script".into()),
    }
    if text.contains("GIVE_UP") {
        return Ok(vec![ToolCall::give_up(text.trim())]);
    }
    if text.contains("FINISH") {
        if attempts == 0 {
            return Err("FINISH before any script was executed".into());
        }
        return Ok(vec![ToolCall::finish(
            format!("attempt_{attempts}.episode"),
            text.trim(),
        )]);
    }
    Err("reply has no script block, FINISH or GIVE_UP".into())
}

impl Reasoner for LlmReasoner {
    fn respond(&mut self, input: &TurnInput<'_>) -> Result<ReasonerReply, TurnFailure> {
        let (text, tokens) = self
            .request_with_retry(&turn_message(input))
            .map_err(TurnFailure::new)?;
        let tokens = tokens.or_else(|| Some(scriptloop_core::engine::synthetic_tokens(&text)));
        match parse_reply(&text, input.context.len()) {
            Ok(calls) => Ok(ReasonerReply {
                calls,
                tokens_out: tokens,
            }),
            Err(message) => Err(TurnFailure {
                message,
                tokens_out: tokens,
            }),
        }
    }
}
