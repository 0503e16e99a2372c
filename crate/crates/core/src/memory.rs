//! Procedural memory: successful planner programs with their environment and instruction.
//!
//! On disk a memory is a JSON array of `{"environment", "query", "code", "status"}`
//! records. The `query` key holds the instruction.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{parse_program, DslError};

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("code does not parse{}: {source}", index.map(|i| format!(" (record {i})")).unwrap_or_default())]
    Parse {
        index: Option<usize>,
        #[source]
        source: DslError,
    },
    #[error("invalid log: {0}")]
    Validation(String),
    #[error("schema error in record {index}: {message}")]
    Schema { index: usize, message: String },
    #[error("memory file {path} is not a JSON array: {message}")]
    NotAnArray { path: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl MemoryError {
    /// 1-based line of the offending code, for parse failures.
    pub fn line(&self) -> Option<usize> {
        match self {
            MemoryError::Parse {
                source: DslError::Syntax { line, .. },
                ..
            } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogStatus {
    #[default]
    Success,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessLog {
    pub environment: String,
    #[serde(rename = "query")]
    pub instruction: String,
    pub code: String,
    pub status: LogStatus,
}

impl SuccessLog {
    pub fn new(
        environment: impl Into<String>,
        instruction: impl Into<String>,
        code: impl Into<String>,
    ) -> Self {
        Self {
            environment: environment.into(),
            instruction: instruction.into(),
            code: code.into(),
            status: LogStatus::Success,
        }
    }

    fn validate(&self, index: Option<usize>) -> Result<(), MemoryError> {
        if self.instruction.trim().is_empty() {
            return Err(MemoryError::Validation(match index {
                Some(i) => format!("record {i} has an empty instruction"),
                None => "instruction is empty".into(),
            }));
        }
        parse_program(&self.code).map_err(|source| MemoryError::Parse { index, source })?;
        Ok(())
    }
}

/// Ordered, append-only collection of success logs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Memory {
    pub logs: Vec<SuccessLog>,
    pub source_label: String,
}

impl Memory {
    pub fn new(source_label: impl Into<String>) -> Self {
        Self {
            logs: Vec::new(),
            source_label: source_label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.logs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SuccessLog> {
        self.logs.iter()
    }
}

/// Returns a new memory with `log` at the tail. Duplicates are kept.
pub fn append_log(memory: &Memory, log: SuccessLog) -> Result<Memory, MemoryError> {
    log.validate(None)?;
    let mut next = memory.clone();
    next.logs.push(log);
    Ok(next)
}

pub fn to_json(memory: &Memory) -> String {
    let mut text = serde_json::to_string_pretty(&memory.logs).expect("logs always serialize");
    text.push('\n');
    text
}

pub fn save_memory(memory: &Memory, path: &Path) -> Result<(), MemoryError> {
    std::fs::write(path, to_json(memory)).map_err(|source| MemoryError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses the on-disk format, re-validating every record against the grammar.
pub fn from_json(text: &str, origin: &str, source_label: &str) -> Result<Memory, MemoryError> {
    let records: Vec<serde_json::Value> =
        serde_json::from_str(text).map_err(|e| MemoryError::NotAnArray {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
    let mut logs = Vec::with_capacity(records.len());
    for (index, record) in records.into_iter().enumerate() {
        let log: SuccessLog = serde_json::from_value(record).map_err(|e| MemoryError::Schema {
            index,
            message: e.to_string(),
        })?;
        log.validate(Some(index))?;
        logs.push(log);
    }
    Ok(Memory {
        logs,
        source_label: source_label.to_string(),
    })
}

/// Loads a memory file; the source label is the file stem.
pub fn load_memory(path: &Path) -> Result<Memory, MemoryError> {
    let text = std::fs::read_to_string(path).map_err(|source| MemoryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    from_json(&text, &path.display().to_string(), &label)
}

pub fn filter_by_environment(memory: &Memory, env: &str) -> Memory {
    Memory {
        logs: memory
            .logs
            .iter()
            .filter(|l| l.environment == env)
            .cloned()
            .collect(),
        source_label: memory.source_label.clone(),
    }
}
