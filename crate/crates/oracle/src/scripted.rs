//! Deterministic endpoint replaying responses from a JSONL fixture.
//!
//! Each line is `{"match": "...", "respond": ..., "repeat": bool, "usage": {...}}`.
//! On every call the first entry that is still available and whose `match`
//! occurs in the rendered prompt is used. Entries are consumed once unless
//! `repeat` is set. `respond` is one of
//! `{"tool_call": {"name": ..., "arguments": {...}}}`,
//! `{"final_answer": <string or object>}` or `{"error": "..."}`.

use std::path::{Path, PathBuf};

use difftriage_core::corpus::{read_jsonl, CorpusError};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::endpoint::{
    estimate_tokens, CompletionRequest, EndpointError, ModelEndpoint, ModelResponse, Reply, ToolCall, Usage,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptResponse {
    ToolCall {
        name: String,
        #[serde(default)]
        arguments: Value,
    },
    FinalAnswer(Value),
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, rename = "match")]
    pub pattern: String,
    pub respond: ScriptResponse,
    #[serde(default)]
    pub repeat: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl ScriptEntry {
    pub fn answer(pattern: &str, answer: Value) -> Self {
        Self {
            pattern: pattern.into(),
            respond: ScriptResponse::FinalAnswer(answer),
            repeat: false,
            usage: None,
        }
    }

    pub fn call(pattern: &str, name: &str, arguments: Value) -> Self {
        Self {
            pattern: pattern.into(),
            respond: ScriptResponse::ToolCall {
                name: name.into(),
                arguments,
            },
            repeat: false,
            usage: None,
        }
    }

    pub fn repeating(mut self) -> Self {
        self.repeat = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedEndpoint {
    entries: Vec<ScriptEntry>,
    used: Vec<bool>,
    calls: usize,
}

impl ScriptedEndpoint {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let used = vec![false; entries.len()];
        Self { entries, used, calls: 0 }
    }

    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        let entries = read_jsonl(path)?.into_iter().map(|(_, e)| e).collect();
        Ok(Self::new(entries))
    }

    /// Number of completions served so far.
    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl ModelEndpoint for ScriptedEndpoint {
    fn complete(&mut self, request: &CompletionRequest) -> Result<ModelResponse, EndpointError> {
        self.calls += 1;
        let prompt = request.render();
        let idx = self
            .entries
            .iter()
            .zip(&self.used)
            .position(|(e, &used)| !used && prompt.contains(&e.pattern))
            .ok_or(EndpointError::ScriptExhausted {
                actor: request.actor,
                call: self.calls,
            })?;
        let entry = &self.entries[idx];
        if !entry.repeat {
            self.used[idx] = true;
        }
        let reply = match &entry.respond {
            ScriptResponse::Error(msg) => return Err(EndpointError::Scripted(msg.clone())),
            ScriptResponse::FinalAnswer(v) => Reply::FinalAnswer(v.clone()),
            ScriptResponse::ToolCall { name, arguments } => Reply::ToolCall(ToolCall {
                id: format!("call_{}", self.calls),
                name: name.clone(),
                arguments: arguments.clone(),
            }),
        };
        let usage = entry.usage.unwrap_or_else(|| Usage {
            input_tokens: estimate_tokens(&prompt),
            output_tokens: estimate_tokens(&reply.render()),
        });
        Ok(ModelResponse { reply, usage })
    }
}

/// Resolves the fixture for one finding. A file is used as is; a directory
/// supplies `<finding_id>.jsonl`, falling back to `default.jsonl`.
pub fn script_path_for(path: &Path, finding_id: &str) -> Option<PathBuf> {
    if !path.is_dir() {
        return Some(path.to_path_buf());
    }
    [format!("{finding_id}.jsonl"), "default.jsonl".to_string()]
        .into_iter()
        .map(|name| path.join(name))
        .find(|p| p.is_file())
}
