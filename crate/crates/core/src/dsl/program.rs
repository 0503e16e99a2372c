use std::collections::BTreeSet;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::command::{parse_command, ComposerCommand};
use super::DslError;

/// One `composer("...")` line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposerStep {
    pub raw: String,
    pub command: ComposerCommand,
}

impl ComposerStep {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let command = parse_command(&raw);
        Self { raw, command }
    }

    /// Builds a step whose raw text is the canonical rendering of `command`.
    pub fn from_command(command: ComposerCommand) -> Self {
        Self {
            raw: command.to_instruction(),
            command,
        }
    }
}

/// A free comment line that is neither the query nor the `# done` trailer.
/// `before_step` is the index of the step it precedes (`steps.len()` = after the last step).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub before_step: usize,
    pub text: String,
}

/// Parsed planner code: objects declaration, query comment, composer steps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlannerProgram {
    pub declared_objects: Option<Vec<String>>,
    pub query_comment: Option<String>,
    pub steps: Vec<ComposerStep>,
    pub comments: Vec<Comment>,
    pub done: bool,
}

static RE_OBJECTS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^objects\s*=\s*\[(.*)\]\s*$").unwrap());
static RE_COMPOSER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^composer\s*\(\s*(?:"([^"]*)"|'([^']*)')\s*\)\s*;?$"#).unwrap()
});
static RE_QUERY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^#\s*Query:\s?(.*)$").unwrap());
static RE_DONE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^#\s*done\s*$").unwrap());

/// Classification of one source line, shared with response extraction.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Line {
    Blank,
    Objects(Vec<String>),
    Query(String),
    Done,
    Comment(String),
    Step(String),
}

fn parse_object_list(body: &str) -> Option<Vec<String>> {
    let body = body.trim();
    if body.is_empty() {
        return Some(Vec::new());
    }
    let mut names = Vec::new();
    for item in body.split(',') {
        let item = item.trim();
        if item.is_empty() {
            // trailing comma
            continue;
        }
        let unquoted = item
            .strip_prefix('\'')
            .and_then(|s| s.strip_suffix('\''))
            .or_else(|| item.strip_prefix('"').and_then(|s| s.strip_suffix('"')))?;
        if unquoted.is_empty() || unquoted.contains(['\'', '"']) {
            return None;
        }
        names.push(unquoted.to_string());
    }
    Some(names)
}

pub(crate) fn classify_line(line: &str) -> Result<Line, &'static str> {
    let line = line.trim();
    if line.is_empty() {
        return Ok(Line::Blank);
    }
    if let Some(c) = RE_OBJECTS.captures(line) {
        return parse_object_list(&c[1])
            .map(Line::Objects)
            .ok_or("malformed objects declaration");
    }
    if let Some(c) = RE_COMPOSER.captures(line) {
        let raw = c.get(1).or_else(|| c.get(2)).map_or("", |m| m.as_str());
        if raw.trim().is_empty() {
            return Err("empty composer instruction");
        }
        return Ok(Line::Step(raw.to_string()));
    }
    if let Some(c) = RE_QUERY.captures(line) {
        return Ok(Line::Query(c[1].trim_end().to_string()));
    }
    if RE_DONE.is_match(line) {
        return Ok(Line::Done);
    }
    if let Some(rest) = line.strip_prefix('#') {
        return Ok(Line::Comment(rest.trim().to_string()));
    }
    if line.starts_with("objects") {
        return Err("malformed objects declaration");
    }
    if line.starts_with("composer") {
        return Err("malformed composer call");
    }
    Err("expected an objects declaration, a comment, or a composer(\"...\") call")
}

/// Parses planner code line by line.
pub fn parse_program(text: &str) -> Result<PlannerProgram, DslError> {
    let mut lines = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let kind = classify_line(line).map_err(|reason| DslError::Syntax {
            line: idx + 1,
            reason: reason.to_string(),
        })?;
        lines.push((idx + 1, kind));
    }
    assemble(lines)
}

pub(crate) fn assemble(lines: Vec<(usize, Line)>) -> Result<PlannerProgram, DslError> {
    let last_content = lines
        .iter()
        .rposition(|(_, l)| *l != Line::Blank)
        .unwrap_or(0);
    let mut program = PlannerProgram::default();
    for (pos, (line_no, kind)) in lines.into_iter().enumerate() {
        match kind {
            Line::Blank => {}
            Line::Objects(names) => {
                if program.declared_objects.is_some() {
                    return Err(DslError::Syntax {
                        line: line_no,
                        reason: "duplicate objects declaration".into(),
                    });
                }
                program.declared_objects = Some(names);
            }
            Line::Query(q) if program.query_comment.is_none() => {
                program.query_comment = Some(q);
            }
            Line::Query(q) => program.comments.push(Comment {
                before_step: program.steps.len(),
                text: format!("Query: {q}"),
            }),
            Line::Done if pos == last_content => program.done = true,
            Line::Done => program.comments.push(Comment {
                before_step: program.steps.len(),
                text: "done".into(),
            }),
            Line::Comment(text) => program.comments.push(Comment {
                before_step: program.steps.len(),
                text,
            }),
            Line::Step(raw) => program.steps.push(ComposerStep::new(raw)),
        }
    }
    if program.steps.is_empty() {
        return Err(DslError::EmptyProgram);
    }
    Ok(program)
}

/// Canonical text: objects line, query comment, steps (with interleaved comments), `# done`.
pub fn render_program(program: &PlannerProgram) -> String {
    let mut out = String::new();
    if let Some(objects) = &program.declared_objects {
        let quoted: Vec<String> = objects.iter().map(|o| format!("'{o}'")).collect();
        out.push_str(&format!("objects = [{}]\n", quoted.join(", ")));
    }
    if let Some(q) = &program.query_comment {
        if q.is_empty() {
            out.push_str("# Query:\n");
        } else {
            out.push_str(&format!("# Query: {q}\n"));
        }
    }
    let push_comments = |out: &mut String, at: usize| {
        for c in program.comments.iter().filter(|c| c.before_step == at) {
            if c.text.is_empty() {
                out.push_str("#\n");
            } else {
                out.push_str(&format!("# {}\n", c.text));
            }
        }
    };
    for (i, step) in program.steps.iter().enumerate() {
        push_comments(&mut out, i);
        out.push_str(&format!("composer(\"{}\")\n", step.raw));
    }
    push_comments(&mut out, program.steps.len());
    if program.done {
        out.push_str("# done\n");
    }
    out
}

/// The form `render(parse(x))` reproduces: lines trimmed, blank lines dropped, newline-terminated.
pub fn normalize(text: &str) -> String {
    let mut out = String::new();
    for line in text.lines() {
        let line = line.trim();
        if !line.is_empty() {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

impl fmt::Display for PlannerProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_program(self))
    }
}

impl PlannerProgram {
    pub fn from_commands(commands: impl IntoIterator<Item = ComposerCommand>) -> Self {
        Self {
            steps: commands.into_iter().map(ComposerStep::from_command).collect(),
            ..Self::default()
        }
    }

    pub fn commands(&self) -> impl Iterator<Item = &ComposerCommand> {
        self.steps.iter().map(|s| &s.command)
    }

    pub fn unknown_count(&self) -> usize {
        self.commands().filter(|c| c.is_unknown()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Warning {
    DeclaredObjectMissing { object: String },
    ReferencedObjectMissing { step: usize, object: String },
    ReferencedObjectUndeclared { step: usize, object: String },
    UnparsedStep { step: usize, raw: String },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::DeclaredObjectMissing { object } => {
                write!(f, "declared object '{object}' is not in the scene")
            }
            Warning::ReferencedObjectMissing { step, object } => {
                write!(f, "step {step} references '{object}', which is not in the scene")
            }
            Warning::ReferencedObjectUndeclared { step, object } => {
                write!(f, "step {step} references undeclared object '{object}'")
            }
            Warning::UnparsedStep { step, raw } => write!(f, "step {step} is unparsed: {raw}"),
        }
    }
}

/// Scene lookup rule shared with the simulator: exact name, or spaces read as underscores.
pub fn resolve_name<'a, I>(reference: &str, names: I) -> Option<&'a str>
where
    I: IntoIterator<Item = &'a str> + Clone,
{
    let underscored = reference.replace(' ', "_");
    names
        .clone()
        .into_iter()
        .find(|n| *n == reference)
        .or_else(|| names.into_iter().find(|n| *n == underscored))
}

/// Pre-execution lint. Never fails; the simulator decides what actually breaks.
pub fn validate_against_scene(
    program: &PlannerProgram,
    object_names: &BTreeSet<String>,
) -> Vec<Warning> {
    let scene = || object_names.iter().map(String::as_str);
    let mut warnings = Vec::new();
    if let Some(declared) = &program.declared_objects {
        for object in declared {
            if resolve_name(object, scene()).is_none() {
                warnings.push(Warning::DeclaredObjectMissing {
                    object: object.clone(),
                });
            }
        }
    }
    for (i, step) in program.steps.iter().enumerate() {
        if let ComposerCommand::Unknown { raw } = &step.command {
            warnings.push(Warning::UnparsedStep {
                step: i,
                raw: raw.clone(),
            });
            continue;
        }
        for object in step.command.object_refs() {
            if resolve_name(object, scene()).is_none() {
                warnings.push(Warning::ReferencedObjectMissing {
                    step: i,
                    object: object.to_string(),
                });
            }
            if let Some(declared) = &program.declared_objects {
                let declared = declared.iter().map(String::as_str);
                if resolve_name(object, declared).is_none() {
                    warnings.push(Warning::ReferencedObjectUndeclared {
                        step: i,
                        object: object.to_string(),
                    });
                }
            }
        }
    }
    warnings
}
