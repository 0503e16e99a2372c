use std::fmt::Write;

use crate::dsl::parse_program;
use crate::memory::Memory;
use crate::replanner::Strategy;

use super::{AblationResult, SuiteResult, ABLATION_STRATEGIES};

fn row_label(s: Strategy) -> &'static str {
    match s {
        Strategy::Retry => "Retry",
        Strategy::NoAdaptation => "MTP w/o Memory Adaptation",
        Strategy::Mtp => "MTP",
        Strategy::SingleShot => "Single shot",
    }
}

fn pct(mean: f64, std: f64) -> String {
    format!("{mean:.1} ± {std:.1}")
}

fn render(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let pad = widths[c] - s.chars().count();
                if c == 0 {
                    format!("{s}{}", " ".repeat(pad))
                } else {
                    format!("{}{s}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Per-task success counts and percentage for one strategy, then mean ± std.
pub fn eval_table(result: &SuiteResult) -> String {
    let mut rows = vec![vec![
        "task".to_string(),
        "success".to_string(),
        format!("{} %", result.strategy),
    ]];
    for (id, t) in &result.per_task {
        let rate = if t.attempts == 0 {
            0.0
        } else {
            100.0 * t.successes as f64 / t.attempts as f64
        };
        rows.push(vec![
            id.clone(),
            format!("{}/{}", t.successes, t.attempts),
            format!("{rate:.1}"),
        ]);
    }
    rows.push(vec![
        "mean ± std".into(),
        String::new(),
        pct(result.mean, result.std),
    ]);
    render(&rows)
}

/// Strategies as rows, memories as columns.
pub fn ablation_table(result: &AblationResult) -> String {
    let mut memories: Vec<&str> = Vec::new();
    for c in &result.cells {
        if !memories.contains(&c.memory.as_str()) {
            memories.push(&c.memory);
        }
    }
    let mut header = vec!["strategy".to_string()];
    header.extend(memories.iter().map(|m| m.to_string()));
    let mut rows = vec![header];
    for s in ABLATION_STRATEGIES {
        let mut row = vec![row_label(s).to_string()];
        for m in &memories {
            row.push(
                result
                    .cell(m, s)
                    .map_or_else(|| "-".into(), |c| pct(c.mean, c.std)),
            );
        }
        rows.push(row);
    }
    render(&rows)
}

pub fn inspect_memory(memory: &Memory) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}: {} log(s)", memory.source_label, memory.len());
    for (i, log) in memory.iter().enumerate() {
        let steps = parse_program(&log.code).map_or(0, |p| p.steps.len());
        let _ = writeln!(
            out,
            "[{i}] {} | {} | {steps} step(s)",
            log.environment, log.instruction
        );
    }
    out
}
