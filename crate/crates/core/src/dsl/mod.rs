//! Planner-program language: an `objects = [...]` declaration, a `# Query:` comment,
//! and a sequence of `composer("...")` steps.
//!
//! The declaration is parsed as data and never evaluated. See `docs/grammar.md`
//! for the grammar reference.

mod command;
mod program;

use thiserror::Error;

pub use command::{
    clean_object_ref, format_cm, parse_command, ComposerCommand, Direction, Offset, Reference,
    Region, RotationSense, DEFAULT_ROTATION_DEGREES,
};
pub(crate) use program::{assemble, classify_line, Line};
pub use program::{
    normalize, parse_program, render_program, resolve_name, validate_against_scene, Comment,
    ComposerStep, PlannerProgram, Warning,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DslError {
    #[error("syntax error on line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("program has no composer steps")]
    EmptyProgram,
}
