//! The boundary between the triage loop and a conversational model.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::transcript::Actor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    /// JSON schema of the arguments object.
    pub parameters: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    /// Set on assistant messages that requested a tool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call: Option<ToolCall>,
    /// Set on tool messages: the call this result answers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            tool_call: None,
            tool_call_id: None,
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
            tool_call: None,
            tool_call_id: None,
        }
    }

    pub fn assistant_call(call: ToolCall) -> Self {
        Self {
            role: Role::Assistant,
            content: String::new(),
            tool_call: Some(call),
            tool_call_id: None,
        }
    }

    pub fn tool_result(call: &ToolCall, content: impl Into<String>) -> Self {
        Self {
            role: Role::Tool,
            content: content.into(),
            tool_call: None,
            tool_call_id: Some(call.id.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub actor: Actor,
    pub system: String,
    pub messages: Vec<Message>,
    pub tools: Vec<ToolDescriptor>,
}

impl CompletionRequest {
    /// Flat text form of the request. The scripted backend matches against
    /// it and token estimates are taken from its length.
    pub fn render(&self) -> String {
        let mut out = format!("[actor: {}]\n[system]\n{}\n", self.actor, self.system);
        if !self.tools.is_empty() {
            let names: Vec<&str> = self.tools.iter().map(|t| t.name.as_str()).collect();
            out.push_str(&format!("[tools] {}\n", names.join(", ")));
        }
        for m in &self.messages {
            match (m.role, &m.tool_call) {
                (Role::Assistant, Some(call)) => {
                    out.push_str(&format!("[assistant]\ntool_call {} {}\n", call.name, call.arguments));
                }
                (Role::Tool, _) => out.push_str(&format!("[tool result]\n{}\n", m.content)),
                (Role::User, _) => out.push_str(&format!("[user]\n{}\n", m.content)),
                (Role::Assistant, None) => out.push_str(&format!("[assistant]\n{}\n", m.content)),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    ToolCall(ToolCall),
    FinalAnswer(Value),
}

impl Reply {
    pub fn render(&self) -> String {
        match self {
            Reply::ToolCall(call) => format!("tool_call {} {}", call.name, call.arguments),
            Reply::FinalAnswer(Value::String(s)) => s.clone(),
            Reply::FinalAnswer(v) => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub reply: Reply,
    pub usage: Usage,
}

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("transport error: {0}")]
    Transport(String),

    #[error("unexpected response: {0}")]
    Protocol(String),

    #[error("script has no entry matching the {actor} prompt (call {call})")]
    ScriptExhausted { actor: Actor, call: usize },

    #[error("scripted failure: {0}")]
    Scripted(String),
}

pub trait ModelEndpoint {
    fn complete(&mut self, request: &CompletionRequest) -> Result<ModelResponse, EndpointError>;
}

/// Rough token count: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}
