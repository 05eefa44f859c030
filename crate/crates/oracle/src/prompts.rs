//! System prompts, shipped as text assets under `prompts/`.

use crate::transcript::Actor;

/// Bumped whenever any prompt text changes.
pub const PROMPT_VERSION: u32 = 1;

pub const ORCHESTRATOR: &str = include_str!("../prompts/orchestrator.md");
pub const DISCREPANCY_FINDER: &str = include_str!("../prompts/discrepancy_finder.md");
pub const SPEC_CHECKER: &str = include_str!("../prompts/spec_checker.md");
pub const CONFIDENCE_CHECKER: &str = include_str!("../prompts/confidence_checker.md");
pub const DUPLICATE_CHECKER: &str = include_str!("../prompts/duplicate_checker.md");
pub const FP_CRITIC: &str = include_str!("../prompts/fp_critic.md");
pub const MINIMIZER: &str = include_str!("../prompts/minimizer.md");
pub const SEQUENTIAL: &str = include_str!("../prompts/sequential.md");

pub fn system_prompt(actor: Actor) -> Option<&'static str> {
    Some(match actor {
        Actor::Orchestrator => ORCHESTRATOR,
        Actor::DiscrepancyFinder => DISCREPANCY_FINDER,
        Actor::SpecChecker => SPEC_CHECKER,
        Actor::ConfidenceChecker => CONFIDENCE_CHECKER,
        Actor::DuplicateChecker => DUPLICATE_CHECKER,
        Actor::FpCritic => FP_CRITIC,
        Actor::Minimizer => MINIMIZER,
        Actor::ToolTerminal | Actor::ToolSpec | Actor::ToolTopk => return None,
    })
}

pub const REPAIR_REQUEST: &str = "Your previous answer could not be used";
pub const ANSWER_SHAPE: &str =
    r#"Reply with exactly one JSON object: {"decision": "REPORT" | "SKIP", "confidence": <0.0 to 1.0>, "rationale": "..."}"#;

pub const STAGE_SUMMARY: &str = "Stage 1 of 4: summarise the discrepancy between the engines in a few sentences.";
pub const STAGE_SPEC: &str =
    "Stage 2 of 4: call the spec tool with a query for the ECMA-262 sections that govern this behaviour, or reply with the query text.";
pub const STAGE_TERMINAL: &str = "Stage 3 of 4: if running code on the engines would clarify the discrepancy, call the terminal tool. Otherwise reply `no execution needed`.";
pub const STAGE_DECISION: &str = "Stage 4 of 4: decide whether to REPORT or SKIP this finding.";
