//! The agentic triage loop and the fixed four-stage sequential baseline.

use std::time::Instant;

use difftriage_core::corpus::Finding;
use serde_json::{json, Value};

use crate::config::OracleConfig;
use crate::endpoint::{CompletionRequest, EndpointError, Message, ModelEndpoint, Reply, ToolCall, ToolDescriptor, Usage};
use crate::prompts;
use crate::tools::{descriptors_for, is_permitted, render_finding, sub_agent_from_tool_name, Tool, Toolbox};
use crate::transcript::{Actor, Mode, Step, TerminatedBy, Transcript};
use crate::verdict::{answer_text, parse_answer, Decision, ParsedAnswer, Verdict};

/// Rationale attached to verdicts forced by the step limit.
pub const STEP_LIMIT_RATIONALE: &str = "step limit";

enum Halt {
    StepLimit,
    Endpoint(EndpointError),
}

enum Outcome {
    Answer(ParsedAnswer),
    Duplicate(String),
    Unparseable(String),
}

struct Observation {
    text: String,
    duplicate: bool,
}

struct Session<'s, 'a> {
    finding: &'s Finding,
    toolbox: &'s Toolbox<'a>,
    config: &'s OracleConfig,
    endpoint: &'s mut dyn ModelEndpoint,
    steps: Vec<Step>,
    usage: Usage,
    synthetic_calls: usize,
}

impl Session<'_, '_> {
    fn at_limit(&self) -> bool {
        self.steps.len() >= self.config.step_limit
    }

    fn model(
        &mut self,
        actor: Actor,
        system: &str,
        messages: &[Message],
        tools: Vec<ToolDescriptor>,
    ) -> Result<Reply, Halt> {
        if self.at_limit() {
            return Err(Halt::StepLimit);
        }
        let request = CompletionRequest {
            actor,
            system: system.to_string(),
            messages: messages.to_vec(),
            tools,
        };
        let response = self.endpoint.complete(&request).map_err(Halt::Endpoint)?;
        self.usage.input_tokens += response.usage.input_tokens;
        self.usage.output_tokens += response.usage.output_tokens;
        self.steps.push(Step {
            actor,
            input: messages.last().map(|m| m.content.clone()).unwrap_or_default(),
            output: response.reply.render(),
        });
        Ok(response.reply)
    }

    fn tool(&mut self, tool: Tool, args: &Value) -> Result<String, Halt> {
        if self.at_limit() {
            return Err(Halt::StepLimit);
        }
        let output = self.toolbox.execute(tool, args);
        self.steps.push(Step {
            actor: tool.actor(),
            input: args.to_string(),
            output: output.clone(),
        });
        Ok(output)
    }

    fn dispatch(&mut self, caller: Actor, call: &ToolCall) -> Result<Observation, Halt> {
        let plain = |text: String| Observation { text, duplicate: false };
        if !is_permitted(caller, &call.name, self.config.duplicate_check) {
            return Ok(plain(format!("error: `{}` is not available to {caller}", call.name)));
        }
        if let Some(tool) = Tool::from_name(&call.name) {
            return self.tool(tool, &call.arguments).map(plain);
        }
        let role = sub_agent_from_tool_name(&call.name).expect("permitted names are tools or sub-agents");
        let Some(task) = call.arguments.get("task").and_then(Value::as_str) else {
            return Ok(plain("error: missing string argument `task`".into()));
        };
        let text = self.sub_agent(role, task)?;
        let duplicate = role == Actor::DuplicateChecker && text.trim_start().to_ascii_uppercase().starts_with("DUPLICATE");
        Ok(Observation { text, duplicate })
    }

    /// Runs a sub-agent to completion within its own step budget.
    fn sub_agent(&mut self, role: Actor, task: &str) -> Result<String, Halt> {
        let system = prompts::system_prompt(role).expect("sub-agents have prompts");
        let limit = self.config.sub_agent_step_limit;
        let start = self.steps.len();
        let inconclusive = || format!("inconclusive: {role} reached its limit of {limit} steps without an answer");
        let mut messages = vec![Message::user(format!(
            "Task from the orchestrator:\n{task}\n\n{}",
            render_finding(self.finding)
        ))];
        loop {
            if self.steps.len() - start >= limit {
                return Ok(inconclusive());
            }
            match self.model(role, system, &messages, descriptors_for(role, self.config.duplicate_check))? {
                Reply::FinalAnswer(answer) => return Ok(answer_text(&answer)),
                Reply::ToolCall(call) => {
                    messages.push(Message::assistant_call(call.clone()));
                    if self.steps.len() - start >= limit {
                        return Ok(inconclusive());
                    }
                    let obs = self.dispatch(role, &call)?;
                    messages.push(Message::tool_result(&call, obs.text));
                }
            }
        }
    }

    /// Parses a final answer, asking once for a corrected one on failure.
    fn settle(
        &mut self,
        answer: Option<&Value>,
        repaired: &mut bool,
        messages: &mut Vec<Message>,
    ) -> Result<Option<ParsedAnswer>, String> {
        let error = match answer {
            Some(v) => match parse_answer(&self.finding.id, v) {
                Ok(parsed) => return Ok(Some(parsed)),
                Err(e) => {
                    messages.push(Message::assistant(answer_text(v)));
                    e.to_string()
                }
            },
            None => "expected a final JSON decision, not a tool call".to_string(),
        };
        if *repaired {
            return Err(error);
        }
        *repaired = true;
        messages.push(Message::user(format!("{}: {error}. {}", prompts::REPAIR_REQUEST, prompts::ANSWER_SHAPE)));
        Ok(None)
    }

    fn orchestrate(&mut self) -> Result<Outcome, Halt> {
        let actor = Actor::Orchestrator;
        let tools = descriptors_for(actor, self.config.duplicate_check);
        let mut messages = vec![Message::user(format!(
            "{}\nDecide whether to REPORT or SKIP this finding.",
            render_finding(self.finding)
        ))];
        let mut repaired = false;
        loop {
            match self.model(actor, prompts::ORCHESTRATOR, &messages, tools.clone())? {
                Reply::ToolCall(call) => {
                    messages.push(Message::assistant_call(call.clone()));
                    let obs = self.dispatch(actor, &call)?;
                    if obs.duplicate {
                        return Ok(Outcome::Duplicate(obs.text));
                    }
                    messages.push(Message::tool_result(&call, obs.text));
                }
                Reply::FinalAnswer(answer) => match self.settle(Some(&answer), &mut repaired, &mut messages) {
                    Ok(Some(parsed)) => return Ok(Outcome::Answer(parsed)),
                    Ok(None) => {}
                    Err(e) => return Ok(Outcome::Unparseable(e)),
                },
            }
        }
    }

    fn synthetic_call(&mut self, tool: Tool, arguments: Value) -> ToolCall {
        self.synthetic_calls += 1;
        ToolCall {
            id: format!("stage_{}", self.synthetic_calls),
            name: tool.name().into(),
            arguments,
        }
    }

    fn sequential(&mut self) -> Result<Outcome, Halt> {
        let actor = Actor::Orchestrator;
        let system = prompts::SEQUENTIAL;
        let mut messages = vec![Message::user(format!(
            "{}\n{}",
            render_finding(self.finding),
            prompts::STAGE_SUMMARY
        ))];

        let summary = self.model(actor, system, &messages, vec![])?;
        messages.push(Message::assistant(summary.render()));

        messages.push(Message::user(prompts::STAGE_SPEC));
        let call = match self.model(actor, system, &messages, vec![Tool::Spec.descriptor()])? {
            Reply::ToolCall(call) if call.name == Tool::Spec.name() => call,
            Reply::ToolCall(other) => {
                let query = other.arguments.get("query").and_then(Value::as_str).unwrap_or_default().to_string();
                self.synthetic_call(Tool::Spec, json!({ "query": query }))
            }
            Reply::FinalAnswer(answer) => self.synthetic_call(Tool::Spec, json!({ "query": answer_text(&answer) })),
        };
        messages.push(Message::assistant_call(call.clone()));
        let observation = self.tool(Tool::Spec, &call.arguments)?;
        messages.push(Message::tool_result(&call, observation));

        messages.push(Message::user(prompts::STAGE_TERMINAL));
        match self.model(actor, system, &messages, vec![Tool::Terminal.descriptor()])? {
            Reply::ToolCall(call) if call.name == Tool::Terminal.name() => {
                messages.push(Message::assistant_call(call.clone()));
                let observation = self.tool(Tool::Terminal, &call.arguments)?;
                messages.push(Message::tool_result(&call, observation));
            }
            other => messages.push(Message::assistant(other.render())),
        }

        messages.push(Message::user(format!("{} {}", prompts::STAGE_DECISION, prompts::ANSWER_SHAPE)));
        let mut repaired = false;
        loop {
            let reply = self.model(actor, system, &messages, vec![])?;
            let answer = match &reply {
                Reply::FinalAnswer(v) => Some(v),
                Reply::ToolCall(_) => {
                    messages.push(Message::assistant(reply.render()));
                    None
                }
            };
            match self.settle(answer, &mut repaired, &mut messages) {
                Ok(Some(parsed)) => return Ok(Outcome::Answer(parsed)),
                Ok(None) => {}
                Err(e) => return Ok(Outcome::Unparseable(e)),
            }
        }
    }

    fn finish(self, mode: Mode, started: Instant, result: Result<Outcome, Halt>) -> Transcript {
        let id = &self.finding.id;
        let mut error = None;
        let (terminated_by, verdict) = match result {
            Ok(Outcome::Answer(ParsedAnswer { mut verdict, summary })) => {
                if verdict.decision == Decision::Report && verdict.confidence < self.config.min_confidence {
                    verdict.decision = Decision::Skip;
                    verdict.rationale = format!(
                        "confidence {} below threshold {}: {}",
                        verdict.confidence, self.config.min_confidence, verdict.rationale
                    );
                } else if verdict.decision == Decision::Report && mode == Mode::Agentic && self.config.duplicate_check {
                    let summary = summary.as_deref().unwrap_or(&verdict.rationale);
                    if let Err(e) = self.toolbox.remember(summary, id) {
                        error = Some(format!("could not record issue: {e}"));
                    }
                }
                (TerminatedBy::Decision, Some(verdict))
            }
            Ok(Outcome::Duplicate(text)) => (
                TerminatedBy::Decision,
                Some(Verdict::new(id, Decision::Skip, 1.0, text.trim()).expect("duplicate text is non-empty")),
            ),
            Ok(Outcome::Unparseable(e)) => {
                error = Some(format!("unparseable final answer: {e}"));
                (TerminatedBy::Error, None)
            }
            Err(Halt::StepLimit) => (
                TerminatedBy::StepLimit,
                Some(Verdict::new(id, Decision::Skip, 0.0, STEP_LIMIT_RATIONALE).expect("valid")),
            ),
            Err(Halt::Endpoint(e)) => {
                error = Some(e.to_string());
                (TerminatedBy::Error, None)
            }
        };
        Transcript {
            finding_id: id.clone(),
            mode,
            steps: self.steps,
            token_count: self.usage.input_tokens + self.usage.output_tokens,
            input_tokens: self.usage.input_tokens,
            output_tokens: self.usage.output_tokens,
            wall_time_ms: started.elapsed().as_millis() as u64,
            terminated_by,
            verdict,
            error,
        }
    }
}

fn run(
    mode: Mode,
    finding: &Finding,
    toolbox: &Toolbox<'_>,
    config: &OracleConfig,
    endpoint: &mut dyn ModelEndpoint,
) -> Transcript {
    let started = Instant::now();
    let mut session = Session {
        finding,
        toolbox,
        config,
        endpoint,
        steps: Vec::new(),
        usage: Usage::default(),
        synthetic_calls: 0,
    };
    let result = match mode {
        Mode::Agentic => session.orchestrate(),
        Mode::Sequential => session.sequential(),
    };
    session.finish(mode, started, result)
}

/// Triage with the orchestrator delegating to sub-agents and tools.
/// The verdict, if any, is in `Transcript::verdict`.
pub fn triage(
    finding: &Finding,
    toolbox: &Toolbox<'_>,
    config: &OracleConfig,
    endpoint: &mut dyn ModelEndpoint,
) -> Transcript {
    run(Mode::Agentic, finding, toolbox, config, endpoint)
}

/// Triage as a fixed chain: summarise, query the specification, optionally
/// run code, decide. No duplicate detection.
pub fn triage_sequential(
    finding: &Finding,
    toolbox: &Toolbox<'_>,
    config: &OracleConfig,
    endpoint: &mut dyn ModelEndpoint,
) -> Transcript {
    run(Mode::Sequential, finding, toolbox, config, endpoint)
}
