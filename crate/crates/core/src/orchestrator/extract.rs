use crate::dsl::{assemble, classify_line, Line, PlannerProgram};

use super::OrchestratorError;

fn is_fence(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with("```") || t.starts_with("~~~")
}

/// Pulls the first contiguous run of program lines containing at least one composer
/// step out of free-form model output. Code fences and prose both end a run.
pub fn extract_program(response: &str) -> Result<PlannerProgram, OrchestratorError> {
    let mut run: Vec<(usize, Line)> = Vec::new();
    let mut has_step = false;
    let lines = response.lines().map(Some).chain(std::iter::once(None));
    for (idx, line) in lines.enumerate() {
        let kind = line
            .filter(|l| !is_fence(l))
            .and_then(|l| classify_line(l).ok());
        match kind {
            Some(kind) => {
                has_step |= matches!(kind, Line::Step(_));
                run.push((idx + 1, kind));
            }
            None => {
                if has_step {
                    return Ok(assemble(std::mem::take(&mut run))?);
                }
                run.clear();
            }
        }
    }
    Err(OrchestratorError::NoProgramFound)
}
