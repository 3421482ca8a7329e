//! Episode scripts: a closed, line-oriented action language.
//!
//! ```text
//! # comment
//! move_to <x> <y> <z> [yaw]
//! gripper open|close
//! wait <ticks>
//! ```
//!
//! Numbers are plain decimals (no exponents, no `inf`/`nan`). A `.episode` file
//! is UTF-8 text in this grammar, one statement per line.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::fmt::Write as _;

use crate::digest::ObsHasher;
use crate::domain::{Action, Grip, Observation, Outcome};
use crate::error::{ContractError, EnvError};
use crate::sim::Environment;

/// An ordered list of actions plus the text it was parsed from.
///
/// Equality is structural: two scripts are equal when their statements are,
/// regardless of comments or number formatting in the source.
#[derive(Debug, Clone, Default)]
pub struct EpisodeScript {
    pub statements: Vec<Action>,
    pub source_text: String,
}

impl PartialEq for EpisodeScript {
    fn eq(&self, other: &Self) -> bool {
        self.statements == other.statements
    }
}

impl EpisodeScript {
    /// Builds a script from actions; the source text is the canonical serialization.
    pub fn from_actions(statements: Vec<Action>) -> Self {
        let source_text = serialize_actions(&statements);
        Self {
            statements,
            source_text,
        }
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    /// Target of the last `move_to`, if any.
    pub fn final_move_target(&self) -> Option<[f64; 3]> {
        self.statements.iter().rev().find_map(|a| match a {
            Action::MoveTo(p) => Some(p.position()),
            _ => None,
        })
    }

    pub fn count_grip(&self, grip: Grip) -> usize {
        self.statements
            .iter()
            .filter(|a| matches!(a, Action::Gripper(g) if *g == grip))
            .count()
    }
}

impl fmt::Display for EpisodeScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize(self))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnknownVerb(String),
    Arity {
        verb: &'static str,
        expected: &'static str,
        got: usize,
    },
    NonNumeric(String),
    BadGrip(String),
    Invalid(ContractError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    /// 1-based line number.
    pub line: usize,
    pub kind: ParseErrorKind,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::UnknownVerb(v) => write!(f, "unknown verb '{v}'"),
            ParseErrorKind::Arity {
                verb,
                expected,
                got,
            } => write!(f, "arity: '{verb}' takes {expected} argument(s), got {got}"),
            ParseErrorKind::NonNumeric(t) => write!(f, "non-numeric field '{t}'"),
            ParseErrorKind::BadGrip(t) => write!(f, "gripper expects open|close, got '{t}'"),
            ParseErrorKind::Invalid(e) => write!(f, "{e}"),
        }
    }
}

fn is_decimal(tok: &str) -> bool {
    let body = tok.strip_prefix(['-', '+']).unwrap_or(tok);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    match frac {
        None => !int.is_empty() && digits(int),
        Some(f) => digits(int) && digits(f) && !(int.is_empty() && f.is_empty()),
    }
}

fn number(tok: &str) -> Result<f64, ParseErrorKind> {
    if !is_decimal(tok) {
        return Err(ParseErrorKind::NonNumeric(tok.to_string()));
    }
    tok.parse::<f64>()
        .map_err(|_| ParseErrorKind::NonNumeric(tok.to_string()))
}

fn parse_line(text: &str) -> Result<Option<Action>, ParseErrorKind> {
    let code = text.split('#').next().unwrap_or("");
    let mut toks = code.split_whitespace();
    let Some(verb) = toks.next() else {
        return Ok(None);
    };
    let args: Vec<&str> = toks.collect();
    let action = match verb {
        "move_to" => {
            if !(3..=4).contains(&args.len()) {
                return Err(ParseErrorKind::Arity {
                    verb: "move_to",
                    expected: "3 or 4",
                    got: args.len(),
                });
            }
            let mut v = [0.0; 4];
            for (slot, tok) in v.iter_mut().zip(&args) {
                *slot = number(tok)?;
            }
            Action::move_to(v[0], v[1], v[2], v[3]).map_err(ParseErrorKind::Invalid)?
        }
        "gripper" => {
            if args.len() != 1 {
                return Err(ParseErrorKind::Arity {
                    verb: "gripper",
                    expected: "1",
                    got: args.len(),
                });
            }
            match args[0] {
                "open" => Action::Gripper(Grip::Open),
                "close" => Action::Gripper(Grip::Close),
                other => return Err(ParseErrorKind::BadGrip(other.to_string())),
            }
        }
        "wait" => {
            if args.len() != 1 {
                return Err(ParseErrorKind::Arity {
                    verb: "wait",
                    expected: "1",
                    got: args.len(),
                });
            }
            let tok = args[0];
            if tok.is_empty() || !tok.bytes().all(|b| b.is_ascii_digit()) {
                return Err(ParseErrorKind::NonNumeric(tok.to_string()));
            }
            let ticks = tok
                .parse::<u32>()
                .map_err(|_| ParseErrorKind::NonNumeric(tok.to_string()))?;
            Action::wait(ticks).map_err(ParseErrorKind::Invalid)?
        }
        other => return Err(ParseErrorKind::UnknownVerb(other.to_string())),
    };
    Ok(Some(action))
}

pub fn parse(text: &str) -> Result<EpisodeScript, ParseError> {
    let mut statements = Vec::new();
    for (i, line) in text.lines().enumerate() {
        match parse_line(line) {
            Ok(Some(a)) => statements.push(a),
            Ok(None) => {}
            Err(kind) => return Err(ParseError { line: i + 1, kind }),
        }
    }
    Ok(EpisodeScript {
        statements,
        source_text: text.to_string(),
    })
}

/// Shortest round-trip decimal, always with a fractional part.
fn decimal(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') {
        s.push_str(".0");
    }
    s
}

fn serialize_actions(actions: &[Action]) -> String {
    let mut out = String::new();
    for a in actions {
        match a {
            Action::MoveTo(p) => {
                let _ = writeln!(
                    out,
                    "move_to {} {} {} {}",
                    decimal(p.x),
                    decimal(p.y),
                    decimal(p.z),
                    decimal(p.yaw)
                );
            }
            Action::Gripper(g) => {
                let _ = writeln!(out, "gripper {}", g.as_str());
            }
            Action::Wait(n) => {
                let _ = writeln!(out, "wait {n}");
            }
        }
    }
    out
}

/// Canonical text: one statement per line, explicit yaw, no comments.
pub fn serialize(script: &EpisodeScript) -> String {
    serialize_actions(&script.statements)
}

/// One executed statement with the observations around it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub action: Action,
    pub pre: Observation,
    pub post: Observation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub initial: Observation,
    pub records: Vec<StepRecord>,
    pub outcome: Outcome,
}

/// Bounded digest of an execution kept in the attempt history.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSummary {
    pub initial: Observation,
    pub terminal: Observation,
    /// First statement whose effect departed from what it commanded.
    pub divergence: Option<String>,
}

/// Arrivals farther than this from the commanded target are reported as blocked.
const BLOCKED_THRESHOLD: f64 = 0.015;

impl Trace {
    pub fn is_truncated(&self, script: &EpisodeScript) -> bool {
        self.records.len() < script.len()
    }

    pub fn summary(&self) -> ObservationSummary {
        ObservationSummary {
            initial: self.initial.clone(),
            terminal: self.outcome.final_obs.clone(),
            divergence: self.first_divergence(),
        }
    }

    fn first_divergence(&self) -> Option<String> {
        for (i, rec) in self.records.iter().enumerate() {
            let n = i + 1;
            match rec.action {
                Action::Gripper(Grip::Close)
                    if rec.pre.gripper_open && rec.post.held_object.is_none() =>
                {
                    return Some(format!(
                        "statement {n} (gripper close): nothing within grasp reach at {}",
                        rec.post.gripper_pose
                    ));
                }
                Action::MoveTo(target) => {
                    for (id, before) in &rec.pre.objects {
                        if rec.pre.held_object.as_deref() == Some(id.as_str()) {
                            continue;
                        }
                        if let Some(after) = rec.post.objects.get(id) {
                            if before.distance(after) > 1e-6 {
                                return Some(format!(
                                    "statement {n} (move_to): {id} displaced by contact from {before} to {after}"
                                ));
                            }
                        }
                    }
                    let short = rec.post.gripper_pose.distance(&target);
                    if short > BLOCKED_THRESHOLD {
                        return Some(format!(
                            "statement {n} (move_to): gripper stopped {short:.4} m from target at {}",
                            rec.post.gripper_pose
                        ));
                    }
                }
                _ => {}
            }
        }
        self.outcome
            .error
            .as_ref()
            .map(|e| format!("statement {}: {e}", self.records.len() + 1))
    }

    /// SHA-256 over the full observation sequence (initial, then each post-state).
    pub fn obs_digest(&self) -> String {
        let mut h = ObsHasher::new();
        h.observation(&self.initial);
        for r in &self.records {
            h.observation(&r.post);
        }
        h.finish_hex()
    }
}

/// Applies each statement in order and evaluates success on the terminal state.
///
/// The environment must already be reset for the intended task. Step errors
/// truncate the trace and set `outcome.error`.
pub fn execute<E: Environment + ?Sized>(
    script: &EpisodeScript,
    env: &mut E,
) -> Result<Trace, EnvError> {
    let initial = env.get_obs()?;
    let mut records = Vec::with_capacity(script.len());
    let mut pre = initial.clone();
    let mut error = None;
    for action in &script.statements {
        match env.step(action) {
            Ok(post) => {
                records.push(StepRecord {
                    action: *action,
                    pre: core::mem::replace(&mut pre, post.clone()),
                    post,
                });
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    let final_obs = env.get_obs()?;
    let success = match error {
        Some(_) => false,
        None => env.check_success()?,
    };
    Ok(Trace {
        initial,
        records,
        outcome: Outcome::new(success, error, final_obs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Pose;
    use crate::sim::Sim;
    use crate::task::find_task;

    #[test]
    fn empty_text_is_an_empty_script() {
        let s = parse("").unwrap();
        assert!(s.is_empty());
        assert_eq!(serialize(&s), "");
    }

    #[test]
    fn two_statements() {
        let s = parse("move_to 0.1 0.2 0.3\ngripper close").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.statements[0], Action::MoveTo(Pose::at(0.1, 0.2, 0.3)));
        assert_eq!(s.statements[1], Action::Gripper(Grip::Close));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let s = parse("# header\n\n  move_to 0 0 0.2 # trailing\n\nwait 3\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.statements[1], Action::Wait(3));
    }

    #[test]
    fn arity_error_carries_line() {
        let e = parse("move_to 0.1 0.2").unwrap_err();
        assert_eq!(e.line, 1);
        assert!(matches!(
            e.kind,
            ParseErrorKind::Arity {
                verb: "move_to",
                got: 2,
                ..
            }
        ));
        let e = parse("gripper open\n\nwait").unwrap_err();
        assert_eq!(e.line, 3);
    }

    #[test]
    fn malformed_fields() {
        let cases = [
            ("jump 1", ParseErrorKind::UnknownVerb("jump".into())),
            (
                "move_to 1e-3 0 0.1",
                ParseErrorKind::NonNumeric("1e-3".into()),
            ),
            (
                "move_to nan 0 0.1",
                ParseErrorKind::NonNumeric("nan".into()),
            ),
            (
                "move_to 0x1 0 0.1",
                ParseErrorKind::NonNumeric("0x1".into()),
            ),
            ("wait -3", ParseErrorKind::NonNumeric("-3".into())),
            ("wait 2.5", ParseErrorKind::NonNumeric("2.5".into())),
            ("gripper half", ParseErrorKind::BadGrip("half".into())),
            ("wait 0", ParseErrorKind::Invalid(ContractError::ZeroWait)),
            (
                "move_to 0 0 9.0",
                ParseErrorKind::Invalid(ContractError::OutOfWorkspace),
            ),
        ];
        for (text, kind) in cases {
            let e = parse(text).unwrap_err();
            assert_eq!(e.line, 1, "{text}");
            assert_eq!(e.kind, kind, "{text}");
        }
    }

    #[test]
    fn omitted_yaw_serializes_explicitly() {
        let s = parse("move_to 0.1 -0.2 0.3").unwrap();
        assert_eq!(serialize(&s), "move_to 0.1 -0.2 0.3 0.0\n");
        assert_eq!(parse(&serialize(&s)).unwrap(), s);
    }

    #[test]
    fn decimal_forms() {
        assert!(is_decimal("1"));
        assert!(is_decimal("-.5"));
        assert!(is_decimal("2."));
        assert!(!is_decimal("."));
        assert!(!is_decimal("-"));
        assert!(!is_decimal("1.2.3"));
    }

    #[test]
    fn empty_script_does_not_succeed() {
        let task = find_task("pick_cube").unwrap();
        let mut env = Sim::default();
        env.reset(&task, 0).unwrap();
        let trace = execute(&EpisodeScript::default(), &mut env).unwrap();
        assert!(!trace.outcome.success);
        assert!(trace.records.is_empty());
        assert!(trace.outcome.error.is_none());
    }

    #[test]
    fn huge_wait_truncates_with_tick_limit() {
        let task = find_task("pick_cube").unwrap();
        let mut env = Sim::default();
        env.reset(&task, 0).unwrap();
        let script = parse("move_to 0 0 0.2\nwait 1000000\ngripper close").unwrap();
        let trace = execute(&script, &mut env).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert!(trace.is_truncated(&script));
        assert!(!trace.outcome.success);
        assert!(trace
            .outcome
            .error
            .as_deref()
            .unwrap()
            .contains("tick limit"));
        assert!(trace.summary().divergence.unwrap().contains("statement 2"));
    }

    #[test]
    fn close_on_nothing_is_reported() {
        let task = find_task("pick_cube").unwrap();
        let mut env = Sim::default();
        env.reset(&task, 0).unwrap();
        let script = parse("move_to 0.3 0.3 0.3\ngripper close").unwrap();
        let trace = execute(&script, &mut env).unwrap();
        let note = trace.summary().divergence.unwrap();
        assert!(note.starts_with("statement 2 (gripper close)"), "{note}");
    }
}
