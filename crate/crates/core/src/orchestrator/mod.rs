//! Prompt construction, completion providers, response extraction and adaptation of
//! retrieved programs to a target environment.

mod adapt;
mod extract;
mod prompt;
mod provider;

use thiserror::Error;

use crate::dsl::DslError;
use crate::http::ProviderError;

pub use adapt::{adapt_program, name_similarity, retarget_name, rule_based_adapt, AdapterKind};
pub use extract::extract_program;
pub use prompt::{
    build_adaptation_prompt, build_generation_prompt, build_replan_prompt, fill, objects_line,
    PromptTemplate, TemplateSet,
};
pub use provider::{
    complete, ChatConfig, Completion, CompletionProvider, HttpCompletionProvider, Script,
    ScriptAction, ScriptRule, ScriptedProvider,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestratorError {
    #[error("template slot '{{{0}}}' has no value")]
    UnfilledSlot(String),
    #[error(transparent)]
    Parse(#[from] DslError),
    #[error("response contains no planner program")]
    NoProgramFound,
    #[error("no scene object shares a token with '{0}'")]
    NoMappableObject(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("cannot read template {path}: {message}")]
    Template { path: String, message: String },
    #[error("prompt example {index} does not parse: {source}")]
    InvalidExample {
        index: usize,
        #[source]
        source: DslError,
    },
}

#[cfg(test)]
mod tests;
