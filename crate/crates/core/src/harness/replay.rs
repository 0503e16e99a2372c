use std::io::BufRead;
use std::path::Path;

use thiserror::Error;

use crate::dsl::parse_program;
use crate::world::{execute_program, Suite, TaskSpec, TraceEntry};

use super::{io_err, HarnessError, TrialLogLine};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("task '{task_id}' repeat {repeat} trial {trial}: drift at step {step}: {detail}")]
    Drift {
        task_id: String,
        repeat: usize,
        trial: usize,
        step: usize,
        detail: String,
    },
    #[error("log line {line}: {message}")]
    Inconsistent { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayReport {
    pub trials: usize,
    pub lines: Vec<String>,
}

pub fn read_episode_log(path: &Path) -> Result<Vec<TrialLogLine>, HarnessError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str(&line).map_err(|e| {
            HarnessError::Config(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        out.push(parsed);
    }
    Ok(out)
}

fn find_task(suite: &Suite, id: &str) -> Option<TaskSpec> {
    suite
        .task(id)
        .cloned()
        .or_else(|| suite.paraphrased().task(id).cloned())
}

fn render_entry(i: usize, e: &TraceEntry) -> String {
    let p = e.gripper_position;
    let mut s = format!(
        "  step {i}: {} -> {:?} gripper ({:.3}, {:.3}, {:.3})",
        e.command, e.outcome, p.x, p.y, p.z
    );
    if let Some(h) = &e.holding {
        s.push_str(&format!(" holding {h}"));
    }
    if let Some(d) = &e.detail {
        s.push_str(&format!(" [{d}]"));
    }
    s
}

fn describe(e: Option<&TraceEntry>) -> String {
    match e {
        Some(e) => format!("{} -> {:?} at {:?}", e.command, e.outcome, e.gripper_position),
        None => "nothing".into(),
    }
}

/// Re-executes every logged program on its recorded scene offset and checks the trace
/// and outcome against the log.
pub fn replay(log: &[TrialLogLine], suite: &Suite) -> Result<ReplayReport, ReplayError> {
    let mut report = ReplayReport::default();
    for (n, entry) in log.iter().enumerate() {
        let line = n + 1;
        let drift = |step: usize, detail: String| ReplayError::Drift {
            task_id: entry.task_id.clone(),
            repeat: entry.repeat,
            trial: entry.trial,
            step,
            detail,
        };
        let header = format!(
            "{} repeat {} trial {} ({})",
            entry.task_id, entry.repeat, entry.trial, entry.strategy
        );
        let Some(code) = &entry.program else {
            report.lines.push(format!(
                "{header}: no program ({})",
                entry.failure_reason.as_deref().unwrap_or("unknown")
            ));
            report.trials += 1;
            continue;
        };
        let task = find_task(suite, &entry.task_id).ok_or_else(|| ReplayError::Inconsistent {
            line,
            message: format!("task '{}' is not in the suite", entry.task_id),
        })?;
        let program = parse_program(code).map_err(|e| ReplayError::Inconsistent {
            line,
            message: format!("logged program does not parse: {e}"),
        })?;
        let result = execute_program(&task.shifted(entry.offset[0], entry.offset[1]), &program);

        let steps = result.trace.len().max(entry.trace.len());
        for i in 0..steps {
            let (now, then) = (result.trace.get(i), entry.trace.get(i));
            if now != then {
                return Err(drift(
                    i,
                    format!("logged {}, replayed {}", describe(then), describe(now)),
                ));
            }
        }
        if result.success != entry.success {
            return Err(drift(
                result.trace.len(),
                format!(
                    "logged success={}, replayed success={}",
                    entry.success, result.success
                ),
            ));
        }
        report.lines.push(format!(
            "{header}: {}",
            if result.success { "success" } else { "failure" }
        ));
        report
            .lines
            .extend(result.trace.iter().enumerate().map(|(i, e)| render_entry(i, e)));
        report.trials += 1;
    }
    Ok(report)
}
