use std::path::Path;

use crate::dsl::{parse_program, render_program, PlannerProgram};
use crate::world::{EnvironmentProfile, PromptExample};

use super::OrchestratorError;

/// Template bodies with `{slot}` placeholders, shared by every environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub preamble: String,
    pub generation: String,
    pub adaptation: String,
    pub replan: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            preamble: include_str!("../../templates/preamble.txt").trim_end().to_string(),
            generation: include_str!("../../templates/generation.txt").to_string(),
            adaptation: include_str!("../../templates/adaptation.txt").to_string(),
            replan: include_str!("../../templates/replan.txt").to_string(),
        }
    }
}

impl TemplateSet {
    /// Reads `preamble.txt`, `generation.txt`, `adaptation.txt` and `replan.txt` from `dir`.
    /// Missing files fall back to the built-in text.
    pub fn load_dir(dir: &Path) -> Result<Self, OrchestratorError> {
        let defaults = Self::default();
        let read = |file: &str, fallback: String| -> Result<String, OrchestratorError> {
            let path = dir.join(file);
            if !path.exists() {
                return Ok(fallback);
            }
            std::fs::read_to_string(&path).map_err(|e| OrchestratorError::Template {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        };
        Ok(Self {
            preamble: read("preamble.txt", defaults.preamble)?.trim_end().to_string(),
            generation: read("generation.txt", defaults.generation)?,
            adaptation: read("adaptation.txt", defaults.adaptation)?,
            replan: read("replan.txt", defaults.replan)?,
        })
    }
}

/// The fixed prompt material for one target environment: template bodies plus that
/// environment's worked examples.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub environment: String,
    pub system_preamble: String,
    pub example_blocks: Vec<(String, PlannerProgram)>,
    pub bodies: TemplateSet,
}

impl PromptTemplate {
    pub fn new(
        environment: &str,
        bodies: TemplateSet,
        examples: &[PromptExample],
    ) -> Result<Self, OrchestratorError> {
        let mut example_blocks = Vec::with_capacity(examples.len());
        for (index, ex) in examples.iter().enumerate() {
            let program = parse_program(&ex.code)
                .map_err(|source| OrchestratorError::InvalidExample { index, source })?;
            example_blocks.push((ex.instruction.clone(), program));
        }
        Ok(Self {
            environment: environment.to_string(),
            system_preamble: bodies.preamble.clone(),
            example_blocks,
            bodies,
        })
    }

    pub fn for_environment(
        env: &EnvironmentProfile,
        bodies: &TemplateSet,
    ) -> Result<Self, OrchestratorError> {
        Self::new(&env.name, bodies.clone(), &env.examples)
    }

    fn examples_text(&self) -> String {
        self.example_blocks
            .iter()
            .map(|(_, p)| format!("{}\n", render_program(p)))
            .collect()
    }
}

/// Substitutes `{name}` placeholders in one pass. A placeholder with no value, or whose
/// value is `None`, is an error. Braces around anything other than an identifier are
/// left alone.
pub fn fill(template: &str, values: &[(&str, Option<&str>)]) -> Result<String, OrchestratorError> {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}');
        let name = close.map(|c| &after[..c]);
        match name {
            Some(name)
                if !name.is_empty()
                    && name.chars().all(|c| c.is_ascii_lowercase() || c == '_') =>
            {
                let value = values
                    .iter()
                    .find(|(slot, _)| *slot == name)
                    .and_then(|(_, v)| *v)
                    .ok_or_else(|| OrchestratorError::UnfilledSlot(name.to_string()))?;
                out.push_str(value);
                rest = &after[name.len() + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn non_empty(s: &str) -> Option<&str> {
    (!s.trim().is_empty()).then_some(s)
}

fn canonical(code: &str) -> Result<String, OrchestratorError> {
    Ok(render_program(&parse_program(code)?))
}

pub fn objects_line(names: &[String]) -> String {
    let quoted: Vec<String> = names.iter().map(|n| format!("'{n}'")).collect();
    format!("objects = [{}]", quoted.join(", "))
}

/// Prompt for trial 0: preamble, target examples, then an objects line and a query stub.
pub fn build_generation_prompt(
    template: &PromptTemplate,
    instruction: &str,
    object_names: Option<&[String]>,
) -> Result<String, OrchestratorError> {
    let examples = template.examples_text();
    let objects = object_names.map(objects_line);
    fill(
        &template.bodies.generation,
        &[
            ("preamble", Some(&template.system_preamble)),
            ("target_env", Some(&template.environment)),
            ("examples", Some(&examples)),
            ("object_list", objects.as_deref()),
            ("instruction", non_empty(instruction)),
        ],
    )
}

/// Prompt asking to rewrite a source-environment program in the target's conventions.
pub fn build_adaptation_prompt(
    template: &PromptTemplate,
    source_code: &str,
    source_env: &str,
) -> Result<String, OrchestratorError> {
    let source = canonical(source_code)?;
    let examples = template.examples_text();
    fill(
        &template.bodies.adaptation,
        &[
            ("preamble", Some(&template.system_preamble)),
            ("target_env", Some(&template.environment)),
            ("examples", Some(&examples)),
            ("source_env", non_empty(source_env)),
            ("source_code", Some(&source)),
        ],
    )
}

/// Re-planning prompt. Block order: examples, adapted memory code, failed code, query.
pub fn build_replan_prompt(
    template: &PromptTemplate,
    failed_code: &str,
    adapted_code: &str,
    instruction: &str,
) -> Result<String, OrchestratorError> {
    let failed = canonical(failed_code)?;
    let adapted = canonical(adapted_code)?;
    let examples = template.examples_text();
    fill(
        &template.bodies.replan,
        &[
            ("preamble", Some(&template.system_preamble)),
            ("target_env", Some(&template.environment)),
            ("examples", Some(&examples)),
            ("adapted_code", Some(&adapted)),
            ("failed_code", Some(&failed)),
            ("instruction", non_empty(instruction)),
        ],
    )
}
