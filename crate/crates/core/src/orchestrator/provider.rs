use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::http::{HttpConfig, JsonClient, ProviderError};

/// Anything that turns a prompt into response text.
pub trait CompletionProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String, ProviderError>;
}

pub fn complete(provider: &dyn CompletionProvider, prompt: &str) -> Result<String, ProviderError> {
    if prompt.trim().is_empty() {
        return Err(ProviderError::Other("empty prompt".into()));
    }
    provider.complete(prompt)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

fn default_temperature() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatConfig {
    #[serde(flatten)]
    pub http: HttpConfig,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

/// OpenAI-style chat-completion endpoint (`{endpoint}/chat/completions`).
pub struct HttpCompletionProvider {
    config: ChatConfig,
    client: JsonClient,
}

impl HttpCompletionProvider {
    pub fn new(config: ChatConfig) -> Self {
        Self {
            config,
            client: JsonClient::new(),
        }
    }

    pub fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.config.http.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        })
    }

    /// Sends one prompt and reports how many attempts it took.
    pub fn chat(&self, prompt: &str) -> Result<Completion, ProviderError> {
        let http = &self.config.http;
        let url = http.url("chat/completions");
        let (value, attempts) =
            self.client
                .post(http, &url, &self.request_body(prompt), http.max_attempts)?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::MalformedResponse {
                attempts,
                message: "missing choices[0].message.content".into(),
            })?;
        Ok(Completion {
            text: text.to_string(),
            attempts,
        })
    }
}

impl CompletionProvider for HttpCompletionProvider {
    fn name(&self) -> &str {
        &self.config.http.model
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        self.chat(prompt).map(|c| c.text)
    }
}

/// What a matching script rule answers with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptAction {
    /// Canned text.
    Response(String),
    /// Copies the prompt text between the line containing the first marker and the
    /// second marker: a model that follows the in-context example verbatim.
    EchoBetween(String, String),
    /// Simulated provider failure.
    Fail(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Every substring must occur in the prompt. An empty list matches anything.
    #[serde(default)]
    pub contains: Vec<String>,
    #[serde(flatten)]
    pub action: ScriptAction,
}

impl ScriptRule {
    pub fn respond(contains: &[&str], text: impl Into<String>) -> Self {
        Self {
            contains: contains.iter().map(|s| s.to_string()).collect(),
            action: ScriptAction::Response(text.into()),
        }
    }

    fn matches(&self, prompt: &str) -> bool {
        self.contains.iter().all(|c| prompt.contains(c.as_str()))
    }
}

fn default_strict() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default = "default_strict")]
    pub strict: bool,
    pub rules: Vec<ScriptRule>,
}

impl Script {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Other(format!("cannot read script {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ProviderError::Other(format!("malformed script {}: {e}", path.display())))
    }
}

/// Deterministic provider driven by an ordered rule list.
///
/// Among the rules matching a prompt, the first one not yet used answers; once all of
/// them are used, the last matching rule keeps answering.
#[derive(Debug)]
pub struct ScriptedProvider {
    script: Script,
    used: Mutex<Vec<bool>>,
}

impl Clone for ScriptedProvider {
    /// A fresh provider with no rules consumed.
    fn clone(&self) -> Self {
        Self::new(self.script.clone())
    }
}

impl ScriptedProvider {
    pub fn new(script: Script) -> Self {
        let used = Mutex::new(vec![false; script.rules.len()]);
        Self { script, used }
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    fn pick(&self, prompt: &str) -> Option<usize> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        let matching: Vec<usize> = (0..self.script.rules.len())
            .filter(|&i| self.script.rules[i].matches(prompt))
            .collect();
        let chosen = matching
            .iter()
            .copied()
            .find(|&i| !used[i])
            .or_else(|| matching.last().copied())?;
        used[chosen] = true;
        Some(chosen)
    }
}

fn echo_between(prompt: &str, start: &str, end: &str) -> Result<String, ProviderError> {
    let at = prompt
        .find(start)
        .ok_or_else(|| ProviderError::Other(format!("echo marker '{start}' not in prompt")))?;
    let body_start = prompt[at..].find('\n').map_or(prompt.len(), |n| at + n + 1);
    let body = &prompt[body_start..];
    let body_end = body.find(end).unwrap_or(body.len());
    Ok(body[..body_end].to_string())
}

impl CompletionProvider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, prompt: &str) -> Result<String, ProviderError> {
        let Some(i) = self.pick(prompt) else {
            return if self.script.strict {
                Err(ProviderError::UnmatchedPrompt)
            } else {
                Ok(String::new())
            };
        };
        match &self.script.rules[i].action {
            ScriptAction::Response(text) => Ok(text.clone()),
            ScriptAction::EchoBetween(start, end) => echo_between(prompt, start, end),
            ScriptAction::Fail(message) => Err(ProviderError::Other(message.clone())),
        }
    }
}
