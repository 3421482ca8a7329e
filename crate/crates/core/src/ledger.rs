//! Per-run resource accounting and per-category aggregation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rust_decimal::{Decimal, RoundingStrategy};

use crate::engine::ToolKind;

/// Placeholder price per output token, in USD.
pub const DEFAULT_RATE_USD: Decimal = Decimal::from_parts(1, 0, 0, false, 5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LedgerEvent {
    Turn,
    Try,
    Tokens(i64),
    Tool(ToolKind),
    Wall(i64),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("negative increment {0}")]
    Negative(i64),
    #[error("a try needs a turn: {tries} tries already recorded over {turns} turns")]
    TryWithoutTurn { turns: u64, tries: u64 },
    #[error("counter overflow")]
    Overflow,
    #[error("no category for task '{0}'")]
    Ungrouped(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceLedger {
    pub tokens_out: u64,
    pub turns: u64,
    pub tries: u64,
    pub wall_ms: u64,
    /// USD per output token.
    pub rate: Decimal,
    pub tool_counts: BTreeMap<ToolKind, u64>,
}

impl Default for ResourceLedger {
    fn default() -> Self {
        Self::with_rate(DEFAULT_RATE_USD)
    }
}

impl ResourceLedger {
    pub fn with_rate(rate: Decimal) -> Self {
        Self {
            tokens_out: 0,
            turns: 0,
            tries: 0,
            wall_ms: 0,
            rate,
            tool_counts: BTreeMap::new(),
        }
    }

    pub fn cost_usd(&self) -> Decimal {
        Decimal::from(self.tokens_out) * self.rate
    }

    pub fn total_tool_calls(&self) -> u64 {
        self.tool_counts.values().sum()
    }

    pub fn record(&self, event: LedgerEvent) -> Result<Self, LedgerError> {
        let add = |v: u64, n: i64| -> Result<u64, LedgerError> {
            if n < 0 {
                return Err(LedgerError::Negative(n));
            }
            v.checked_add(n as u64).ok_or(LedgerError::Overflow)
        };
        let mut next = self.clone();
        match event {
            LedgerEvent::Turn => next.turns = add(next.turns, 1)?,
            LedgerEvent::Try => {
                if next.tries >= next.turns {
                    return Err(LedgerError::TryWithoutTurn {
                        turns: next.turns,
                        tries: next.tries,
                    });
                }
                next.tries += 1;
            }
            LedgerEvent::Tokens(n) => next.tokens_out = add(next.tokens_out, n)?,
            LedgerEvent::Wall(ms) => next.wall_ms = add(next.wall_ms, ms)?,
            LedgerEvent::Tool(kind) => {
                let c = next.tool_counts.entry(kind).or_insert(0);
                *c = add(*c, 1)?;
            }
        }
        Ok(next)
    }
}

/// The slice of a finished run that aggregation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub task_id: String,
    /// Reported success (audit-adjusted).
    pub success: bool,
    pub ledger: ResourceLedger,
}

/// Mergeable running sums for one category.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CategoryAccumulator {
    pub runs: u64,
    pub successes: u64,
    pub tokens: u128,
    pub turns: u128,
    pub tries: u128,
    pub wall_ms: u128,
    pub cost: Decimal,
}

impl CategoryAccumulator {
    pub fn add(&mut self, r: &RunRecord) {
        self.runs += 1;
        self.successes += r.success as u64;
        self.tokens += r.ledger.tokens_out as u128;
        self.turns += r.ledger.turns as u128;
        self.tries += r.ledger.tries as u128;
        self.wall_ms += r.ledger.wall_ms as u128;
        self.cost += r.ledger.cost_usd();
    }

    pub fn merge(&mut self, other: &CategoryAccumulator) {
        self.runs += other.runs;
        self.successes += other.successes;
        self.tokens += other.tokens;
        self.turns += other.turns;
        self.tries += other.tries;
        self.wall_ms += other.wall_ms;
        self.cost += other.cost;
    }

    pub fn summarize(&self, category: &str) -> CategorySummary {
        let n = self.runs.max(1) as f64;
        CategorySummary {
            category: category.into(),
            task_count: self.runs,
            mean_cost: if self.runs == 0 {
                Decimal::ZERO
            } else {
                self.cost / Decimal::from(self.runs)
            },
            mean_tokens: self.tokens as f64 / n,
            mean_turns: self.turns as f64 / n,
            mean_tries: self.tries as f64 / n,
            mean_minutes: self.wall_ms as f64 / n / 60_000.0,
            success_rate: self.successes as f64 / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategorySummary {
    pub category: String,
    pub task_count: u64,
    pub mean_cost: Decimal,
    pub mean_tokens: f64,
    pub mean_turns: f64,
    pub mean_tries: f64,
    pub mean_minutes: f64,
    pub success_rate: f64,
}

impl CategorySummary {
    /// Resource cells in table order: tasks, cost, tokens, turns, tries, minutes.
    pub fn resource_row(&self) -> String {
        format!(
            "{} | {} | ${:.2} | {:.1}K | {:.1} | {:.1} | {:.1}",
            self.category,
            self.task_count,
            self.mean_cost
                .round_dp_with_strategy(2, RoundingStrategy::MidpointAwayFromZero),
            self.mean_tokens / 1000.0,
            self.mean_turns,
            self.mean_tries,
            self.mean_minutes
        )
    }
}

/// Partial aggregation keyed by category; merge several and then summarize.
pub fn accumulate<F>(
    results: &[RunRecord],
    grouping: F,
) -> Result<BTreeMap<String, CategoryAccumulator>, LedgerError>
where
    F: Fn(&str) -> Option<String>,
{
    let mut acc: BTreeMap<String, CategoryAccumulator> = BTreeMap::new();
    for r in results {
        let cat = grouping(&r.task_id).ok_or_else(|| LedgerError::Ungrouped(r.task_id.clone()))?;
        acc.entry(cat).or_default().add(r);
    }
    Ok(acc)
}

pub fn merge_accumulators(
    mut a: BTreeMap<String, CategoryAccumulator>,
    b: &BTreeMap<String, CategoryAccumulator>,
) -> BTreeMap<String, CategoryAccumulator> {
    for (k, v) in b {
        a.entry(k.clone()).or_default().merge(v);
    }
    a
}

pub fn summarize(acc: &BTreeMap<String, CategoryAccumulator>) -> Vec<CategorySummary> {
    acc.iter().map(|(k, v)| v.summarize(k)).collect()
}

/// Per-category means and success rates, ordered by category name.
pub fn aggregate<F>(results: &[RunRecord], grouping: F) -> Result<Vec<CategorySummary>, LedgerError>
where
    F: Fn(&str) -> Option<String>,
{
    Ok(summarize(&accumulate(results, grouping)?))
}

/// Whole-percent share of each tool kind over all calls, using largest-remainder
/// rounding so the shares sum to exactly 100. Ties go to the earlier kind.
pub fn tool_histogram<'a, I>(ledgers: I) -> BTreeMap<ToolKind, u32>
where
    I: IntoIterator<Item = &'a ResourceLedger>,
{
    let mut counts: BTreeMap<ToolKind, u64> = BTreeMap::new();
    for l in ledgers {
        for (k, c) in &l.tool_counts {
            *counts.entry(*k).or_insert(0) += c;
        }
    }
    counts.retain(|_, c| *c > 0);
    let total: u64 = counts.values().sum();
    if total == 0 {
        return BTreeMap::new();
    }
    let mut out: BTreeMap<ToolKind, u32> = BTreeMap::new();
    let mut rems: Vec<(u64, ToolKind)> = Vec::new();
    let mut assigned = 0u64;
    for (k, c) in &counts {
        let scaled = *c as u128 * 100;
        let floor = (scaled / total as u128) as u64;
        let rem = (scaled % total as u128) as u64;
        out.insert(*k, floor as u32);
        assigned += floor;
        rems.push((rem, *k));
    }
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, k) in rems.iter().take((100 - assigned) as usize) {
        *out.get_mut(k).expect("present") += 1;
    }
    out
}
