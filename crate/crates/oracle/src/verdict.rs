//! Final decisions and parsing of the model's structured answer.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Report,
    Skip,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Report => "REPORT",
            Decision::Skip => "SKIP",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub finding_id: String,
    pub decision: Decision,
    pub confidence: f64,
    pub rationale: String,
}

impl Verdict {
    pub fn new(
        finding_id: impl Into<String>,
        decision: Decision,
        confidence: f64,
        rationale: impl Into<String>,
    ) -> Result<Self, AnswerError> {
        let rationale = rationale.into();
        if !(0.0..=1.0).contains(&confidence) {
            return Err(AnswerError::ConfidenceOutOfRange(confidence));
        }
        if rationale.trim().is_empty() {
            return Err(AnswerError::EmptyRationale);
        }
        Ok(Self {
            finding_id: finding_id.into(),
            decision,
            confidence,
            rationale,
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AnswerError {
    #[error("answer is not a JSON object")]
    NotJson,

    #[error("missing or non-{expected} field `{field}`")]
    Field { field: &'static str, expected: &'static str },

    #[error("decision must be REPORT or SKIP, got `{0}`")]
    Decision(String),

    #[error("confidence {0} is outside [0, 1]")]
    ConfidenceOutOfRange(f64),

    #[error("rationale is empty")]
    EmptyRationale,
}

/// A parsed final answer plus the optional one-line issue summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnswer {
    pub verdict: Verdict,
    pub summary: Option<String>,
}

/// Parses a final answer given either as a JSON object or as text that
/// contains one (possibly inside a code fence).
pub fn parse_answer(finding_id: &str, answer: &Value) -> Result<ParsedAnswer, AnswerError> {
    let object = match answer {
        Value::Object(_) => answer.clone(),
        Value::String(text) => extract_json_object(text).ok_or(AnswerError::NotJson)?,
        _ => return Err(AnswerError::NotJson),
    };
    let decision = match object.get("decision").and_then(Value::as_str) {
        Some(d) => match d.trim().to_ascii_uppercase().as_str() {
            "REPORT" => Decision::Report,
            "SKIP" => Decision::Skip,
            _ => return Err(AnswerError::Decision(d.to_string())),
        },
        None => return Err(AnswerError::Field { field: "decision", expected: "string" }),
    };
    let confidence = object
        .get("confidence")
        .and_then(Value::as_f64)
        .ok_or(AnswerError::Field { field: "confidence", expected: "numeric" })?;
    let rationale = object
        .get("rationale")
        .and_then(Value::as_str)
        .ok_or(AnswerError::Field { field: "rationale", expected: "string" })?;
    let summary = object
        .get("summary")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    Ok(ParsedAnswer {
        verdict: Verdict::new(finding_id, decision, confidence, rationale.trim())?,
        summary,
    })
}

fn extract_json_object(text: &str) -> Option<Value> {
    if let Ok(v @ Value::Object(_)) = serde_json::from_str(text.trim()) {
        return Some(v);
    }
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    match serde_json::from_str(text.get(start..=end)?) {
        Ok(v @ Value::Object(_)) => Some(v),
        _ => None,
    }
}

/// Renders any answer as plain text for the next prompt.
pub fn answer_text(answer: &Value) -> String {
    match answer {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
