//! REPORT/SKIP triage of differential findings by a model-driven agent.
//!
//! An orchestrator loop talks to a [`ModelEndpoint`], calls tools (engine
//! terminal, specification search, similar-issue lookup) and delegates to
//! scoped sub-agents, each with its own tool subset. Every session is
//! recorded as a [`Transcript`] and bounded by a hard step limit.

pub mod agent;
pub mod config;
pub mod endpoint;
pub mod http;
pub mod prompts;
pub mod scripted;
pub mod telemetry;
pub mod tools;
pub mod transcript;
pub mod verdict;

pub use agent::{triage, triage_sequential};
pub use config::OracleConfig;
pub use endpoint::{ModelEndpoint, Reply, ToolCall};
pub use scripted::{ScriptEntry, ScriptedEndpoint};
pub use telemetry::{telemetry_report, TelemetryReport};
pub use tools::Toolbox;
pub use transcript::{Actor, Mode, TerminatedBy, Transcript};
pub use verdict::{Decision, Verdict};
