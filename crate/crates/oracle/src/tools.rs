//! Tools exposed to the agents and the matrix of who may call what.

use std::sync::Mutex;

use difftriage_core::corpus::Finding;
use difftriage_core::memory::{IssueStore, DEFAULT_TOP_K};
use difftriage_core::runner::{run_one, EngineConfig};
use difftriage_core::specindex::SpecIndex;
use serde_json::{json, Value};

use crate::endpoint::ToolDescriptor;
use crate::transcript::Actor;

/// Default number of specification sections returned by the spec tool.
pub const DEFAULT_SPEC_LIMIT: usize = 3;
/// Per-stream cap on engine output shown to the model.
pub const OBSERVATION_CHARS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tool {
    Terminal,
    Spec,
    TopK,
}

impl Tool {
    pub fn name(self) -> &'static str {
        match self {
            Tool::Terminal => "terminal",
            Tool::Spec => "spec",
            Tool::TopK => "top_k_similar",
        }
    }

    pub fn actor(self) -> Actor {
        match self {
            Tool::Terminal => Actor::ToolTerminal,
            Tool::Spec => Actor::ToolSpec,
            Tool::TopK => Actor::ToolTopk,
        }
    }

    pub fn from_name(name: &str) -> Option<Tool> {
        [Tool::Terminal, Tool::Spec, Tool::TopK].into_iter().find(|t| t.name() == name)
    }

    pub fn descriptor(self) -> ToolDescriptor {
        let (description, parameters) = match self {
            Tool::Terminal => (
                "Run JavaScript code on one configured engine, or on every engine with engine_name \"all\".",
                json!({
                    "type": "object",
                    "properties": {
                        "engine_name": {"type": "string"},
                        "code": {"type": "string"},
                    },
                    "required": ["engine_name", "code"],
                }),
            ),
            Tool::Spec => (
                "Search the ECMA-262 specification by keywords or fetch a section by number.",
                json!({
                    "type": "object",
                    "properties": {
                        "query": {"type": "string"},
                        "limit": {"type": "integer", "minimum": 1},
                    },
                    "required": ["query"],
                }),
            ),
            Tool::TopK => (
                "List previously reported issues most similar to the query.",
                json!({
                    "type": "object",
                    "properties": {
                        "query": {"type": "string"},
                        "k": {"type": "integer", "minimum": 1},
                    },
                    "required": ["query"],
                }),
            ),
        };
        ToolDescriptor {
            name: self.name().into(),
            description: description.into(),
            parameters,
        }
    }
}

/// Tool name under which the orchestrator invokes a sub-agent.
pub fn sub_agent_tool_name(role: Actor) -> Option<&'static str> {
    Some(match role {
        Actor::DiscrepancyFinder => "discrepancy_finder",
        Actor::SpecChecker => "spec_checker",
        Actor::ConfidenceChecker => "confidence_checker",
        Actor::DuplicateChecker => "duplicate_checker",
        Actor::FpCritic => "fp_critic",
        Actor::Minimizer => "minimizer",
        _ => return None,
    })
}

pub fn sub_agent_from_tool_name(name: &str) -> Option<Actor> {
    Actor::SUB_AGENTS.into_iter().find(|&a| sub_agent_tool_name(a) == Some(name))
}

fn sub_agent_descriptor(role: Actor) -> ToolDescriptor {
    let description = match role {
        Actor::DiscrepancyFinder => "Characterise the divergence and propose root causes.",
        Actor::SpecChecker => "Find and explain the governing ECMA-262 sections.",
        Actor::ConfidenceChecker => "Rate how well the evidence supports a decision.",
        Actor::DuplicateChecker => "Check whether the issue was already reported.",
        Actor::FpCritic => "Challenge the reasoning against known benign divergences.",
        Actor::Minimizer => "Shrink the program to a minimal reproducer (experimental).",
        _ => unreachable!("not a sub-agent"),
    };
    ToolDescriptor {
        name: sub_agent_tool_name(role).expect("sub-agent").into(),
        description: description.into(),
        parameters: json!({
            "type": "object",
            "properties": {"task": {"type": "string"}},
            "required": ["task"],
        }),
    }
}

/// Tools each actor may call directly.
pub fn permitted_tools(actor: Actor) -> &'static [Tool] {
    match actor {
        Actor::Orchestrator => &[Tool::Terminal, Tool::Spec, Tool::TopK],
        Actor::DiscrepancyFinder => &[Tool::Terminal, Tool::Spec],
        Actor::SpecChecker => &[Tool::Spec],
        Actor::DuplicateChecker => &[Tool::TopK],
        Actor::FpCritic | Actor::ConfidenceChecker | Actor::Minimizer => &[Tool::Terminal],
        Actor::ToolTerminal | Actor::ToolSpec | Actor::ToolTopk => &[],
    }
}

/// Sub-agents each actor may invoke. Only the orchestrator delegates.
pub fn permitted_sub_agents(actor: Actor, duplicate_check: bool) -> Vec<Actor> {
    if actor != Actor::Orchestrator {
        return Vec::new();
    }
    Actor::SUB_AGENTS
        .into_iter()
        .filter(|&a| duplicate_check || a != Actor::DuplicateChecker)
        .collect()
}

pub fn is_permitted(actor: Actor, name: &str, duplicate_check: bool) -> bool {
    Tool::from_name(name).is_some_and(|t| permitted_tools(actor).contains(&t))
        || sub_agent_from_tool_name(name).is_some_and(|a| permitted_sub_agents(actor, duplicate_check).contains(&a))
}

pub fn descriptors_for(actor: Actor, duplicate_check: bool) -> Vec<ToolDescriptor> {
    let mut out: Vec<ToolDescriptor> = permitted_tools(actor).iter().map(|t| t.descriptor()).collect();
    out.extend(permitted_sub_agents(actor, duplicate_check).into_iter().map(sub_agent_descriptor));
    out
}

/// Shared dependencies of a triage session.
pub struct Toolbox<'a> {
    pub engines: &'a [EngineConfig],
    pub spec: Option<&'a SpecIndex>,
    /// Shared across concurrent sessions; writes are serialised by the lock.
    pub memory: Option<&'a Mutex<IssueStore>>,
}

impl Toolbox<'_> {
    /// Runs a tool and renders its observation. Failures are returned as
    /// observation text so the model can react to them.
    pub fn execute(&self, tool: Tool, args: &Value) -> String {
        let result = match tool {
            Tool::Terminal => self.terminal(args),
            Tool::Spec => self.spec(args),
            Tool::TopK => self.top_k(args),
        };
        result.unwrap_or_else(|e| format!("error: {e}"))
    }

    fn terminal(&self, args: &Value) -> Result<String, String> {
        let engine = str_arg(args, "engine_name")?;
        let code = str_arg(args, "code")?;
        let selected: Vec<&EngineConfig> = if engine.eq_ignore_ascii_case("all") {
            self.engines.iter().collect()
        } else {
            self.engines.iter().filter(|e| e.name == engine).collect()
        };
        if selected.is_empty() {
            let names: Vec<&str> = self.engines.iter().map(|e| e.name.as_str()).collect();
            return Err(format!("unknown engine `{engine}`; available: {}", names.join(", ")));
        }
        let mut out = String::new();
        for e in selected {
            let r = run_one(e, code).map_err(|err| err.to_string())?;
            out.push_str(&format!("=== {} (exit {}{}) ===\n", r.engine_name, r.exit_code, if r.timed_out { ", timed out" } else { "" }));
            out.push_str(&format!("stdout:\n{}\nstderr:\n{}\n", clip(&r.stdout), clip(&r.stderr)));
        }
        Ok(out)
    }

    fn spec(&self, args: &Value) -> Result<String, String> {
        let index = self.spec.ok_or("no specification index is configured")?;
        let query = str_arg(args, "query")?;
        if let Some(section) = index.get(query) {
            return Ok(format!("[{}] {}\n{}\n", section.section_id, section.title, section.body));
        }
        let limit = usize_arg(args, "limit")?.unwrap_or(DEFAULT_SPEC_LIMIT);
        let hits = index.query(query, limit);
        if hits.is_empty() {
            return Ok("no matching specification sections".into());
        }
        Ok(hits
            .iter()
            .map(|h| format!("[{}] {} (similarity {:.4})\n{}\n", h.section_id, h.title, h.similarity, h.excerpt))
            .collect::<Vec<_>>()
            .join("\n"))
    }

    fn top_k(&self, args: &Value) -> Result<String, String> {
        let query = str_arg(args, "query")?;
        let k = usize_arg(args, "k")?.unwrap_or(DEFAULT_TOP_K);
        let Some(memory) = self.memory else {
            return Ok("no previously reported issues".into());
        };
        let hits = memory.lock().map_err(|_| "issue store lock poisoned")?.top_k_similar(query, k);
        if hits.is_empty() {
            return Ok("no previously reported issues".into());
        }
        Ok(hits
            .iter()
            .enumerate()
            .map(|(rank, (r, sim))| {
                format!("{}. {} (finding {}) similarity {sim:.4}: {}", rank + 1, r.issue_id, r.finding_id, r.summary)
            })
            .collect::<Vec<_>>()
            .join("\n"))
    }

    /// Stores the summary of a reported issue, if a store is attached.
    pub fn remember(&self, summary: &str, finding_id: &str) -> Result<(), String> {
        if let Some(memory) = self.memory {
            memory
                .lock()
                .map_err(|_| "issue store lock poisoned".to_string())?
                .record_issue(summary, finding_id)
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

fn str_arg<'v>(args: &'v Value, key: &str) -> Result<&'v str, String> {
    args.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("missing string argument `{key}`"))
}

fn usize_arg(args: &Value, key: &str) -> Result<Option<usize>, String> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => match v.as_u64() {
            Some(n) if n > 0 => Ok(Some(n as usize)),
            _ => Err(format!("argument `{key}` must be a positive integer")),
        },
    }
}

fn clip(s: &str) -> String {
    if s.chars().count() <= OBSERVATION_CHARS {
        return s.to_string();
    }
    let mut out: String = s.chars().take(OBSERVATION_CHARS).collect();
    out.push_str("\n[clipped]");
    out
}

/// Text block describing a finding, shared by every first prompt.
pub fn render_finding(finding: &Finding) -> String {
    let mut out = format!("Finding {}\n\nProgram:\n```js\n{}\n```\n", finding.id, finding.snippet.trim_end());
    for r in &finding.engine_results {
        out.push_str(&format!(
            "\n--- {} (exit {}{}) ---\nstdout:\n{}\nstderr:\n{}\n",
            r.engine_name,
            r.exit_code,
            if r.timed_out { ", timed out" } else { "" },
            clip(&r.stdout),
            clip(&r.stderr)
        ));
    }
    out
}
