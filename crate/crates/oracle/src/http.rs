//! Chat-completion client for OpenAI-compatible HTTP APIs.

use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use crate::endpoint::{
    estimate_tokens, CompletionRequest, EndpointError, ModelEndpoint, ModelResponse, Reply, Role, ToolCall, Usage,
};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
const REQUEST_TIMEOUT: Duration = Duration::from_secs(300);

pub struct HttpEndpoint {
    agent: Agent,
    url: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
}

impl HttpEndpoint {
    /// `base_url` is the API root; `/chat/completions` is appended unless
    /// already present.
    pub fn new(base_url: &str, model: impl Into<String>, api_key: Option<String>) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(REQUEST_TIMEOUT))
            .http_status_as_error(false)
            .build()
            .into();
        let base = base_url.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        Self {
            agent,
            url,
            model: model.into(),
            api_key,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn request_body(&self, request: &CompletionRequest) -> Value {
        let mut messages = vec![json!({"role": "system", "content": request.system})];
        for m in &request.messages {
            messages.push(match (m.role, &m.tool_call) {
                (Role::Assistant, Some(call)) => json!({
                    "role": "assistant",
                    "content": null,
                    "tool_calls": [{
                        "id": call.id,
                        "type": "function",
                        "function": {"name": call.name, "arguments": call.arguments.to_string()},
                    }],
                }),
                (Role::Tool, _) => json!({
                    "role": "tool",
                    "tool_call_id": m.tool_call_id,
                    "content": m.content,
                }),
                (Role::User, _) => json!({"role": "user", "content": m.content}),
                (Role::Assistant, None) => json!({"role": "assistant", "content": m.content}),
            });
        }
        let mut body = json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": messages,
        });
        if !request.tools.is_empty() {
            body["tools"] = request
                .tools
                .iter()
                .map(|t| {
                    json!({
                        "type": "function",
                        "function": {"name": t.name, "description": t.description, "parameters": t.parameters},
                    })
                })
                .collect();
        }
        body
    }
}

impl ModelEndpoint for HttpEndpoint {
    fn complete(&mut self, request: &CompletionRequest) -> Result<ModelResponse, EndpointError> {
        let body = self.request_body(request);
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = req
            .send_json(&body)
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(EndpointError::Transport(format!("HTTP {status}: {}", text.trim())));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| EndpointError::Protocol(format!("invalid JSON: {e}")))?;
        parse_completion(&value, || estimate_tokens(&request.render()))
    }
}

/// Extracts the first choice of a chat-completion response.
pub fn parse_completion(value: &Value, estimate_input: impl FnOnce() -> u64) -> Result<ModelResponse, EndpointError> {
    let message = value
        .pointer("/choices/0/message")
        .ok_or_else(|| EndpointError::Protocol("response has no choices[0].message".into()))?;
    let reply = match message.pointer("/tool_calls/0") {
        Some(call) => {
            let name = call
                .pointer("/function/name")
                .and_then(Value::as_str)
                .ok_or_else(|| EndpointError::Protocol("tool call without a function name".into()))?;
            let arguments = match call.pointer("/function/arguments") {
                Some(Value::String(s)) if s.trim().is_empty() => json!({}),
                Some(Value::String(s)) => serde_json::from_str(s)
                    .map_err(|e| EndpointError::Protocol(format!("tool arguments are not JSON: {e}")))?,
                Some(other) => other.clone(),
                None => json!({}),
            };
            Reply::ToolCall(ToolCall {
                id: call.get("id").and_then(Value::as_str).unwrap_or("call_0").to_string(),
                name: name.to_string(),
                arguments,
            })
        }
        None => Reply::FinalAnswer(Value::String(
            message.get("content").and_then(Value::as_str).unwrap_or_default().to_string(),
        )),
    };
    let usage = match (
        value.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        value.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    ) {
        (Some(input_tokens), Some(output_tokens)) => Usage {
            input_tokens,
            output_tokens,
        },
        _ => Usage {
            input_tokens: estimate_input(),
            output_tokens: estimate_tokens(&reply.render()),
        },
    };
    Ok(ModelResponse { reply, usage })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tool_call_and_content() {
        let v = json!({
            "choices": [{"message": {"tool_calls": [{"id": "abc", "function": {"name": "spec", "arguments": "{\"query\":\"q\"}"}}]}}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 3},
        });
        let r = parse_completion(&v, || 0).unwrap();
        assert_eq!(
            r.reply,
            Reply::ToolCall(ToolCall { id: "abc".into(), name: "spec".into(), arguments: json!({"query": "q"}) })
        );
        assert_eq!(r.usage, Usage { input_tokens: 10, output_tokens: 3 });

        let v = json!({"choices": [{"message": {"content": "hello"}}]});
        let r = parse_completion(&v, || 7).unwrap();
        assert_eq!(r.reply, Reply::FinalAnswer(json!("hello")));
        assert_eq!(r.usage.input_tokens, 7);

        assert!(parse_completion(&json!({}), || 0).is_err());
    }

    #[test]
    fn url_gets_completions_suffix() {
        assert_eq!(HttpEndpoint::new("http://h/v1/", "m", None).url, "http://h/v1/chat/completions");
        assert_eq!(HttpEndpoint::new("http://h/v1/chat/completions", "m", None).url, "http://h/v1/chat/completions");
    }
}
