//! Suite reports rebuilt from run directories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rust_decimal::Decimal;
use scriptloop_core::engine::ToolKind;
use scriptloop_core::ledger::{
    accumulate, summarize, tool_histogram, CategorySummary, LedgerError, RunRecord,
};
use scriptloop_core::ResourceLedger;

use crate::artifacts::{read_meta, read_trace, ArtifactError, Meta};

pub const CSV_FILE: &str = "report.csv";
pub const MD_FILE: &str = "report.md";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

/// One run as the report sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub meta: Meta,
    pub ledger: ResourceLedger,
}

impl ReportRow {
    pub fn load(dir: &Path) -> Result<Self, ReportError> {
        let meta = read_meta(dir)?;
        let trace = read_trace(dir)?;
        let rate = Decimal::from_str_exact(&meta.cost_rate_usd)
            .map_err(|e| ReportError::Invalid(format!("{}: cost_rate_usd: {e}", dir.display())))?;
        let mut ledger = ResourceLedger::with_rate(rate);
        ledger.tokens_out = meta.tokens_out;
        ledger.turns = meta.num_turns as u64;
        ledger.tries = meta.num_tries as u64;
        ledger.wall_ms = trace.iter().map(|l| l.wall_ms).sum();
        for (k, v) in &meta.tool_counts {
            let kind = ToolKind::parse(k).ok_or_else(|| {
                ReportError::Invalid(format!("{}: unknown tool '{k}'", dir.display()))
            })?;
            ledger.tool_counts.insert(kind, *v);
        }
        Ok(Self { meta, ledger })
    }

    fn record(&self, success: bool) -> RunRecord {
        RunRecord {
            task_id: self.meta.task.clone(),
            success,
            ledger: self.ledger.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Audit-adjusted success.
    pub categories: Vec<CategorySummary>,
    /// Same runs with raw success.
    pub raw: Vec<CategorySummary>,
    pub flagged: BTreeMap<String, u64>,
    pub histogram: BTreeMap<ToolKind, u32>,
    pub per_task: BTreeMap<String, (u64, u64, u64)>,
}

pub fn build_report(rows: &[ReportRow]) -> Result<Report, ReportError> {
    let category: BTreeMap<&str, &str> = rows
        .iter()
        .map(|r| (r.meta.task.as_str(), r.meta.category.as_str()))
        .collect();
    let group = |t: &str| category.get(t).map(|c| c.to_string());
    let reported: Vec<RunRecord> = rows.iter().map(|r| r.record(r.meta.success)).collect();
    let raw: Vec<RunRecord> = rows.iter().map(|r| r.record(r.meta.raw_success)).collect();
    let mut flagged = BTreeMap::new();
    let mut per_task: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for r in rows {
        *flagged.entry(r.meta.category.clone()).or_insert(0) += !r.meta.flags.is_empty() as u64;
        let e = per_task.entry(r.meta.task.clone()).or_default();
        e.0 += 1;
        e.1 += r.meta.success as u64;
        e.2 += r.meta.raw_success as u64;
    }
    Ok(Report {
        categories: summarize(&accumulate(&reported, group)?),
        raw: summarize(&accumulate(&raw, group)?),
        flagged,
        histogram: tool_histogram(rows.iter().map(|r| &r.ledger)),
        per_task,
    })
}

pub fn load_rows(dirs: &[PathBuf]) -> Result<Vec<ReportRow>, ReportError> {
    dirs.iter().map(|d| ReportRow::load(d)).collect()
}

pub fn render_csv(rep: &Report) -> String {
    let mut s = String::from(
        "category,tasks,mean_cost_usd,mean_tokens,mean_turns,mean_tries,mean_minutes,success_rate,raw_success_rate,flagged\n",
    );
    for (c, r) in rep.categories.iter().zip(&rep.raw) {
        let _ = writeln!(
            s,
            "{},{},{},{:.1},{:.2},{:.2},{:.3},{:.4},{:.4},{}",
            c.category,
            c.task_count,
            c.mean_cost.round_dp(6).normalize(),
            c.mean_tokens,
            c.mean_turns,
            c.mean_tries,
            c.mean_minutes,
            c.success_rate,
            r.success_rate,
            rep.flagged.get(&c.category).copied().unwrap_or(0)
        );
    }
    s
}

/// Percentages in the column order of the tool-usage table.
pub fn histogram_cells(h: &BTreeMap<ToolKind, u32>) -> [u32; 5] {
    let g = |k| h.get(&k).copied().unwrap_or(0);
    [
        g(ToolKind::ExecScript),
        g(ToolKind::WriteScript),
        g(ToolKind::Read),
        g(ToolKind::FetchDoc),
        g(ToolKind::Finish) + g(ToolKind::GiveUp),
    ]
}

pub fn render_markdown(rep: &Report) -> String {
    let mut s = String::from("# Suite Report\n\n## Resources per task\n\n");
    s.push_str(
        "| Category | Tasks | Cost/Task | Tokens/Task | Turns/Task | Tries/Task | Minutes/Task |\n",
    );
    s.push_str("|---|---|---|---|---|---|---|\n");
    for c in &rep.categories {
        let _ = writeln!(s, "| {} |", c.resource_row());
    }
    s.push_str("\n## Success\n\n| Category | Runs | Success | Raw success | Flagged |\n|---|---|---|---|---|\n");
    for (c, r) in rep.categories.iter().zip(&rep.raw) {
        let _ = writeln!(
            s,
            "| {} | {} | {:.1}% | {:.1}% | {} |",
            c.category,
            c.task_count,
            c.success_rate * 100.0,
            r.success_rate * 100.0,
            rep.flagged.get(&c.category).copied().unwrap_or(0)
        );
    }
    s.push_str("\n## Per task\n\n| Task | Runs | Success | Raw success |\n|---|---|---|---|\n");
    for (t, (n, ok, raw)) in &rep.per_task {
        let _ = writeln!(s, "| {t} | {n} | {ok} | {raw} |");
    }
    s.push_str("\n## Tool usage\n\n| Bash (EXEC) | Write (WRITE) | Read (READ) | Web (FETCH_DOC) | Other |\n|---|---|---|---|---|\n");
    let cells = histogram_cells(&rep.histogram);
    let _ = writeln!(
        s,
        "| {}% | {}% | {}% | {}% | {}% |",
        cells[0], cells[1], cells[2], cells[3], cells[4]
    );
    s
}

/// Writes `report.csv` and `report.md` into `out` for the given run dirs.
pub fn write_report(out: &Path, dirs: &[PathBuf]) -> Result<Report, ReportError> {
    let rep = build_report(&load_rows(dirs)?)?;
    for (name, text) in [
        (CSV_FILE, render_csv(&rep)),
        (MD_FILE, render_markdown(&rep)),
    ] {
        let path = out.join(name);
        fs::write(&path, text).map_err(|source| ReportError::Io { path, source })?;
    }
    Ok(rep)
}
