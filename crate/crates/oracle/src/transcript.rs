//! Actors, per-step records and the transcript of one triage session.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::verdict::Verdict;

/// Who produced a step: a model-driven role or a tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Actor {
    Orchestrator,
    DiscrepancyFinder,
    SpecChecker,
    ConfidenceChecker,
    DuplicateChecker,
    FpCritic,
    Minimizer,
    ToolTerminal,
    ToolSpec,
    ToolTopk,
}

impl Actor {
    pub const ALL: [Actor; 10] = [
        Actor::Orchestrator,
        Actor::DiscrepancyFinder,
        Actor::SpecChecker,
        Actor::ConfidenceChecker,
        Actor::DuplicateChecker,
        Actor::FpCritic,
        Actor::Minimizer,
        Actor::ToolTerminal,
        Actor::ToolSpec,
        Actor::ToolTopk,
    ];

    /// Roles the orchestrator can delegate to.
    pub const SUB_AGENTS: [Actor; 6] = [
        Actor::DiscrepancyFinder,
        Actor::SpecChecker,
        Actor::ConfidenceChecker,
        Actor::DuplicateChecker,
        Actor::FpCritic,
        Actor::Minimizer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Actor::Orchestrator => "ORCHESTRATOR",
            Actor::DiscrepancyFinder => "DISCREPANCY_FINDER",
            Actor::SpecChecker => "SPEC_CHECKER",
            Actor::ConfidenceChecker => "CONFIDENCE_CHECKER",
            Actor::DuplicateChecker => "DUPLICATE_CHECKER",
            Actor::FpCritic => "FP_CRITIC",
            Actor::Minimizer => "MINIMIZER",
            Actor::ToolTerminal => "TOOL_TERMINAL",
            Actor::ToolSpec => "TOOL_SPEC",
            Actor::ToolTopk => "TOOL_TOPK",
        }
    }

    pub fn is_tool(self) -> bool {
        matches!(self, Actor::ToolTerminal | Actor::ToolSpec | Actor::ToolTopk)
    }

    /// Steps by non-tool actors are model calls.
    pub fn is_model(self) -> bool {
        !self.is_tool()
    }
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub actor: Actor,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TerminatedBy {
    Decision,
    StepLimit,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Agentic,
    Sequential,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agentic" => Ok(Mode::Agentic),
            "sequential" => Ok(Mode::Sequential),
            other => Err(format!("unknown triage mode `{other}` (expected agentic or sequential)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub finding_id: String,
    pub mode: Mode,
    pub steps: Vec<Step>,
    pub token_count: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Wall-clock duration; the only field that varies between identical runs.
    pub wall_time_ms: u64,
    pub terminated_by: TerminatedBy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Transcript {
    pub fn actors(&self) -> Vec<Actor> {
        self.steps.iter().map(|s| s.actor).collect()
    }

    pub fn model_calls(&self) -> usize {
        self.steps.iter().filter(|s| s.actor.is_model()).count()
    }

    pub fn tool_calls(&self, tool: Actor) -> usize {
        self.steps.iter().filter(|s| s.actor == tool).count()
    }

    /// Copy with the timing field zeroed, for replay comparisons.
    pub fn without_timing(&self) -> Transcript {
        Transcript {
            wall_time_ms: 0,
            ..self.clone()
        }
    }
}
