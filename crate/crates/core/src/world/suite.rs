use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvironmentProfile, SceneObject, SuccessPredicate, TaskSpec, WorldError, DEFAULT_MAX_STEPS};

fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS
}

/// A task as written in a suite file; `environment` names a profile in the same file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub instruction: String,
    pub environment: String,
    pub objects: Vec<SceneObject>,
    pub success: SuccessPredicate,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paraphrases: Vec<String>,
}

/// On-disk suite layout: `{"environments": [...], "tasks": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteFile {
    pub environments: Vec<EnvironmentProfile>,
    pub tasks: Vec<TaskRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub environments: BTreeMap<String, EnvironmentProfile>,
    pub tasks: Vec<TaskSpec>,
}

impl Suite {
    pub fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }

    /// Expands every task into one variant per paraphrase (`<id>#p<k>`), dropping the
    /// original wording. Tasks without paraphrases are kept as-is.
    pub fn paraphrased(&self) -> Suite {
        let mut tasks = Vec::new();
        for t in &self.tasks {
            if t.paraphrases.is_empty() {
                tasks.push(t.clone());
                continue;
            }
            for (k, p) in t.paraphrases.iter().enumerate() {
                let mut v = t.clone();
                v.id = format!("{}#p{}", t.id, k + 1);
                v.instruction = p.clone();
                v.paraphrases.clear();
                tasks.push(v);
            }
        }
        Suite {
            environments: self.environments.clone(),
            tasks,
        }
    }
}

pub fn parse_suite(json: &str, origin: &str) -> Result<Suite, WorldError> {
    let file: SuiteFile = serde_json::from_str(json).map_err(|e| WorldError::Schema {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    let mut environments = BTreeMap::new();
    for env in file.environments {
        env.validate()?;
        if environments.insert(env.name.clone(), env).is_some() {
            return Err(WorldError::Schema {
                path: origin.to_string(),
                message: "duplicate environment name".into(),
            });
        }
    }
    let mut ids = BTreeSet::new();
    let mut tasks = Vec::with_capacity(file.tasks.len());
    for record in file.tasks {
        if !ids.insert(record.id.clone()) {
            return Err(WorldError::InvalidTask(format!("duplicate task id '{}'", record.id)));
        }
        let environment = environments
            .get(&record.environment)
            .cloned()
            .ok_or_else(|| {
                WorldError::InvalidTask(format!(
                    "task '{}' names unknown environment '{}'",
                    record.id, record.environment
                ))
            })?;
        let task = TaskSpec {
            id: record.id,
            instruction: record.instruction,
            environment,
            initial_scene: record.objects,
            success: record.success,
            max_steps: record.max_steps,
            paraphrases: record.paraphrases,
        };
        task.validate()?;
        tasks.push(task);
    }
    Ok(Suite {
        environments,
        tasks,
    })
}

pub fn load_suite(path: &Path) -> Result<Suite, WorldError> {
    let text = std::fs::read_to_string(path).map_err(|e| WorldError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_suite(&text, &path.display().to_string())
}
