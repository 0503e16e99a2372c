use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dsl::{resolve_name, ComposerCommand, ComposerStep, Offset, PlannerProgram, Reference};
use crate::world::EnvironmentProfile;

use super::{
    build_adaptation_prompt, complete, extract_program, CompletionProvider, OrchestratorError,
    PromptTemplate,
};

/// Which adapter rewrites a retrieved program for the target environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    #[default]
    #[serde(alias = "rule")]
    RuleBased,
    Llm,
}

fn tokens(name: &str) -> BTreeSet<String> {
    name.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_ascii_lowercase)
        .collect()
}

/// Jaccard similarity of the lowercase word tokens of two names.
pub fn name_similarity(a: &str, b: &str) -> f64 {
    let (ta, tb) = (tokens(a), tokens(b));
    let union = ta.union(&tb).count();
    if union == 0 {
        return 0.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

/// Maps an object reference onto a scene name: exact match first, else the most
/// token-similar name (ties: shortest, then lexicographic). `None` when nothing overlaps.
pub fn retarget_name(reference: &str, scene: &[String]) -> Option<String> {
    if let Some(exact) = resolve_name(reference, scene.iter().map(String::as_str)) {
        return Some(exact.to_string());
    }
    let mut best: Option<(f64, &String)> = None;
    for name in scene {
        let score = name_similarity(reference, name);
        if score <= 0.0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((s, b)) => {
                score > s || (score == s && (name.len(), name) < (b.len(), b))
            }
        };
        if better {
            best = Some((score, name));
        }
    }
    best.map(|(_, n)| n.clone())
}

fn map_ref(name: &str, scene: &[String]) -> Result<String, OrchestratorError> {
    retarget_name(name, scene).ok_or_else(|| OrchestratorError::NoMappableObject(name.to_string()))
}

fn adapt_command(
    command: &ComposerCommand,
    scale: f64,
    scene: &[String],
) -> Result<ComposerCommand, OrchestratorError> {
    use ComposerCommand as C;
    Ok(match command {
        C::Grasp { object } => C::Grasp {
            object: map_ref(object, scene)?,
        },
        C::MoveRelative {
            distance,
            direction,
            reference,
        } => C::MoveRelative {
            distance: distance * scale,
            direction: *direction,
            reference: match reference {
                Reference::Object(o) => Reference::Object(map_ref(o, scene)?),
                other => other.clone(),
            },
        },
        C::MoveTo {
            target,
            offset,
            region,
        } => C::MoveTo {
            target: map_ref(target, scene)?,
            offset: offset.as_ref().map(|o| Offset {
                direction: o.direction,
                distance: o.distance * scale,
            }),
            region: *region,
        },
        C::MoveAwayFrom { object, distance } => C::MoveAwayFrom {
            object: map_ref(object, scene)?,
            distance: distance * scale,
        },
        other => other.clone(),
    })
}

/// Deterministic rewrite of a source-environment program into the target's
/// conventions: object names retargeted to the scene, distances rescaled by the
/// unit-scale ratio, a leading default pose added where the target needs one, and a
/// trailing default pose added where the target's plans end with one.
pub fn rule_based_adapt(
    source: &PlannerProgram,
    source_env: &EnvironmentProfile,
    target_env: &EnvironmentProfile,
    scene_objects: &[String],
) -> Result<PlannerProgram, OrchestratorError> {
    let scale = target_env.unit_scale / source_env.unit_scale;
    let mut steps = Vec::with_capacity(source.steps.len() + 2);
    for step in &source.steps {
        let command = adapt_command(&step.command, scale, scene_objects)?;
        if command == step.command {
            steps.push(step.clone());
        } else {
            steps.push(ComposerStep::from_command(command));
        }
    }

    let mut comments = source.comments.clone();
    let starts_at_default = matches!(
        steps.first().map(|s| &s.command),
        Some(ComposerCommand::DefaultPose)
    );
    if target_env.requires_default_pose_init && !starts_at_default {
        steps.insert(0, ComposerStep::from_command(ComposerCommand::DefaultPose));
        for c in &mut comments {
            c.before_step += 1;
        }
    }
    let ends_at_default = matches!(
        steps.last().map(|s| &s.command),
        Some(ComposerCommand::DefaultPose)
    );
    if target_env.default_pose_trailer && !ends_at_default {
        steps.push(ComposerStep::from_command(ComposerCommand::DefaultPose));
    }

    let declared_objects = source.declared_objects.as_ref().map(|names| {
        let mut out: Vec<String> = Vec::with_capacity(names.len());
        for name in names {
            if let Some(mapped) = retarget_name(name, scene_objects) {
                if !out.contains(&mapped) {
                    out.push(mapped);
                }
            }
        }
        out
    });

    Ok(PlannerProgram {
        declared_objects,
        query_comment: source.query_comment.clone(),
        steps,
        comments,
        done: source.done,
    })
}

/// Adapts with the chosen adapter. The LLM path renders the adaptation prompt for the
/// target template and extracts the program from the response.
pub fn adapt_program(
    kind: AdapterKind,
    source: &PlannerProgram,
    source_env: &EnvironmentProfile,
    target_env: &EnvironmentProfile,
    scene_objects: &[String],
    llm: Option<(&dyn CompletionProvider, &PromptTemplate)>,
) -> Result<PlannerProgram, OrchestratorError> {
    match (kind, llm) {
        (AdapterKind::Llm, Some((provider, template))) => {
            let code = crate::dsl::render_program(source);
            let prompt = build_adaptation_prompt(template, &code, &source_env.name)?;
            let response = complete(provider, &prompt)?;
            extract_program(&response)
        }
        (AdapterKind::Llm, None) => Err(OrchestratorError::Provider(
            crate::http::ProviderError::Other("the llm adapter needs a completion provider".into()),
        )),
        (AdapterKind::RuleBased, _) => {
            rule_based_adapt(source, source_env, target_env, scene_objects)
        }
    }
}
