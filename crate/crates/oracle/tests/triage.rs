use std::sync::Mutex;

use difftriage_core::corpus::Finding;
use difftriage_core::memory::IssueStore;
use difftriage_core::runner::{run_differential, EngineConfig};
use difftriage_core::specindex::SpecIndex;
use difftriage_oracle::endpoint::{CompletionRequest, EndpointError, ModelEndpoint, ModelResponse};
use difftriage_oracle::scripted::ScriptResponse;
use difftriage_oracle::tools::is_permitted;
use difftriage_oracle::{
    triage, triage_sequential, Actor, Decision, OracleConfig, ScriptEntry, ScriptedEndpoint, TerminatedBy, Toolbox,
    Transcript,
};
use proptest::prelude::*;
use serde_json::json;

const SPEC: &str = "\
# 20.2.3.5 Function.prototype.toString ( )
Return an implementation-defined String source code representation of func.

# 22.1.3.22 String.prototype.search ( regexp )
If searcher is not undefined and IsCallable(searcher) is false, throw a TypeError exception.

# 10.4.7.1 Object.prototype.__proto__ setter
Throw a TypeError if the receiver is not an Object.
";

fn engines() -> Vec<EngineConfig> {
    vec![
        EngineConfig::new("alpha", "/bin/sh", &["-c", "echo alpha; cat \"$1\"", "alpha", "{file}"]),
        EngineConfig::new("beta", "/bin/sh", &["-c", "echo beta >&2; exit 3", "beta", "{file}"]),
    ]
}

fn finding(id: &str) -> Finding {
    run_differential(&engines(), &format!("print('{id}')"), id).unwrap()
}

fn config() -> OracleConfig {
    OracleConfig {
        script_path: Some("unused".into()),
        ..OracleConfig::default()
    }
}

fn report(confidence: f64) -> serde_json::Value {
    json!({"decision": "REPORT", "confidence": confidence, "rationale": "beta throws where alpha prints", "summary": "beta exits 3 on print"})
}

fn run(script: Vec<ScriptEntry>, spec: Option<&SpecIndex>, memory: Option<&Mutex<IssueStore>>) -> Transcript {
    let engines = engines();
    let toolbox = Toolbox { engines: &engines, spec, memory };
    triage(&finding("f1"), &toolbox, &config(), &mut ScriptedEndpoint::new(script))
}

/// Each tool step must belong to the model step right before it, and that
/// actor must be allowed to call the tool.
fn assert_permissions_hold(t: &Transcript, duplicate_check: bool) {
    let mut caller = None;
    for step in &t.steps {
        if step.actor.is_model() {
            caller = Some(step.actor);
            continue;
        }
        let tool_name = match step.actor {
            Actor::ToolTerminal => "terminal",
            Actor::ToolSpec => "spec",
            _ => "top_k_similar",
        };
        let caller = caller.expect("tool step without a preceding model step");
        assert!(is_permitted(caller, tool_name, duplicate_check), "{caller} called {tool_name}");
    }
}

#[test]
fn immediate_report_is_one_step() {
    let t = run(vec![ScriptEntry::answer("", report(0.9))], None, None);
    assert_eq!(t.terminated_by, TerminatedBy::Decision);
    assert_eq!(t.actors(), [Actor::Orchestrator]);
    let v = t.verdict.unwrap();
    assert_eq!((v.decision, v.confidence), (Decision::Report, 0.9));
    assert_eq!(v.finding_id, "f1");
}

#[test]
fn nonterminating_script_stops_at_step_limit() {
    let spin = ScriptEntry::call("", "terminal", json!({"engine_name": "alpha", "code": "1"})).repeating();
    let t = run(vec![spin.clone()], None, None);
    assert_eq!(t.steps.len(), 120);
    assert_eq!(t.terminated_by, TerminatedBy::StepLimit);
    let v = t.verdict.unwrap();
    assert_eq!((v.decision, v.confidence, v.rationale.as_str()), (Decision::Skip, 0.0, "step limit"));

    // Odd limits cut in the middle of a model/tool pair.
    let engines = engines();
    let toolbox = Toolbox { engines: &engines, spec: None, memory: None };
    let config = OracleConfig { step_limit: 7, sub_agent_step_limit: 3, ..config() };
    let t = triage(&finding("f1"), &toolbox, &config, &mut ScriptedEndpoint::new(vec![spin]));
    assert_eq!(t.steps.len(), 7);
    assert_eq!(t.terminated_by, TerminatedBy::StepLimit);
}

#[test]
fn replayed_actor_sequence_matches_script() {
    let index = SpecIndex::build(SPEC).unwrap();
    let script = vec![
        ScriptEntry::call("", "terminal", json!({"engine_name": "all", "code": "print(1)"})),
        ScriptEntry::call("", "terminal", json!({"engine_name": "beta", "code": "print(2)"})),
        ScriptEntry::call("", "spec", json!({"query": "toString source representation"})),
        ScriptEntry::answer("[20.2.3.5]", json!({"decision": "SKIP", "confidence": 0.7, "rationale": "implementation-defined"})),
    ];
    let t = run(script, Some(&index), None);
    use Actor::*;
    assert_eq!(
        t.actors(),
        [Orchestrator, ToolTerminal, Orchestrator, ToolTerminal, Orchestrator, ToolSpec, Orchestrator]
    );
    assert!(t.steps[1].output.contains("=== alpha (exit 0) ==="));
    assert!(t.steps[1].output.contains("=== beta (exit 3) ==="));
    assert!(!t.steps[3].output.contains("alpha"));
    assert!(t.steps[5].output.starts_with("[20.2.3.5]"));
    assert_eq!(t.verdict.as_ref().unwrap().decision, Decision::Skip);
    assert_permissions_hold(&t, true);
}

#[test]
fn spec_checker_returns_section_from_index() {
    let index = SpecIndex::build(SPEC).unwrap();
    let script = vec![
        ScriptEntry::call("[actor: ORCHESTRATOR]", "spec_checker", json!({"task": "what governs String.prototype.search?"})),
        ScriptEntry::call("[actor: SPEC_CHECKER]", "spec", json!({"query": "search IsCallable searcher"})),
        ScriptEntry::answer("[22.1.3.22]", json!("Section 22.1.3.22 requires a TypeError when searcher is not callable.")),
        ScriptEntry::answer("Section 22.1.3.22 requires", report(0.8)),
    ];
    let t = run(script, Some(&index), None);
    use Actor::*;
    assert_eq!(t.actors(), [Orchestrator, SpecChecker, ToolSpec, SpecChecker, Orchestrator]);
    assert!(t.steps[4].input.contains("22.1.3.22"));
    assert_eq!(t.verdict.unwrap().decision, Decision::Report);
}

#[test]
fn duplicate_checker_with_empty_memory_finds_nothing() {
    let memory = Mutex::new(IssueStore::in_memory());
    let script = vec![
        ScriptEntry::call("[actor: ORCHESTRATOR]", "duplicate_checker", json!({"task": "beta exits 3 on print"})),
        ScriptEntry::call("[actor: DUPLICATE_CHECKER]", "top_k_similar", json!({"query": "beta exits 3 on print"})),
        ScriptEntry::answer("no previously reported issues", json!("NOT DUPLICATE: the store is empty")),
        ScriptEntry::answer("NOT DUPLICATE", report(0.9)),
    ];
    let t = run(script, None, Some(&memory));
    assert_eq!(t.steps[3].output, "NOT DUPLICATE: the store is empty");
    assert_eq!(t.verdict.unwrap().decision, Decision::Report);
    // The report was remembered under its summary.
    let store = memory.lock().unwrap();
    assert_eq!(store.len(), 1);
    assert_eq!(store.records()[0].summary, "beta exits 3 on print");
}

#[test]
fn duplicate_route_forces_skip() {
    let summary = "String.prototype.search accepts a non-callable Symbol.search";
    let mut store = IssueStore::in_memory();
    store.record_issue(summary, "earlier").unwrap();
    let hits = store.top_k_similar(summary, 10);
    assert_eq!(hits[0].0.finding_id, "earlier");
    assert_eq!(hits[0].1, 1.0);
    let memory = Mutex::new(store);

    let script = vec![
        ScriptEntry::call("[actor: ORCHESTRATOR]", "duplicate_checker", json!({ "task": summary })),
        ScriptEntry::call("[actor: DUPLICATE_CHECKER]", "top_k_similar", json!({ "query": summary })),
        ScriptEntry::answer("similarity 1.0000", json!("DUPLICATE: issue-0001 describes the same defect")),
        ScriptEntry::answer("[actor: DUPLICATE_CHECKER]", json!("NOT DUPLICATE")),
        ScriptEntry::answer("[actor: ORCHESTRATOR]", report(0.9)),
    ];
    let t = run(script, None, Some(&memory));
    use Actor::*;
    assert_eq!(t.actors(), [Orchestrator, DuplicateChecker, ToolTopk, DuplicateChecker]);
    assert!(t.steps[2].output.starts_with("1. issue-0001 (finding earlier) similarity 1.0000"));
    let v = t.verdict.unwrap();
    assert_eq!((v.decision, v.confidence), (Decision::Skip, 1.0));
    assert!(v.rationale.starts_with("DUPLICATE: issue-0001"));
    assert_eq!(memory.lock().unwrap().len(), 1, "skips are not recorded");
}

#[test]
fn sub_agent_step_limit_returns_inconclusive() {
    let index = SpecIndex::build(SPEC).unwrap();
    let script = vec![
        ScriptEntry::call("[actor: ORCHESTRATOR]", "spec_checker", json!({"task": "look it up"})),
        ScriptEntry::call("[actor: SPEC_CHECKER]", "spec", json!({"query": "TypeError"})).repeating(),
        ScriptEntry::answer("inconclusive: SPEC_CHECKER reached its limit of 20 steps", report(0.4)),
    ];
    let t = run(script, Some(&index), None);
    let sub_steps = t.steps.iter().filter(|s| matches!(s.actor, Actor::SpecChecker | Actor::ToolSpec)).count();
    assert_eq!(sub_steps, 20);
    assert_eq!(t.steps.len(), 22);
    assert_eq!(t.terminated_by, TerminatedBy::Decision);
}

#[test]
fn forbidden_calls_are_refused() {
    let index = SpecIndex::build(SPEC).unwrap();
    let script = vec![
        ScriptEntry::call("[actor: ORCHESTRATOR]", "spec_checker", json!({"task": "t"})),
        ScriptEntry::call("[actor: SPEC_CHECKER]", "terminal", json!({"engine_name": "all", "code": "1"})),
        ScriptEntry::call("[actor: SPEC_CHECKER]", "fp_critic", json!({"task": "nested"})),
        ScriptEntry::answer("[actor: SPEC_CHECKER]", json!("no tools worked")),
        ScriptEntry::call("[actor: ORCHESTRATOR]", "shell_exec", json!({})),
        ScriptEntry::answer("[actor: ORCHESTRATOR]", report(0.5)),
    ];
    let t = run(script, Some(&index), None);
    use Actor::*;
    assert_eq!(t.actors(), [Orchestrator, SpecChecker, SpecChecker, SpecChecker, Orchestrator, Orchestrator]);
    assert!(t.steps[2].input.contains("`terminal` is not available to SPEC_CHECKER"));
    assert!(t.steps[3].input.contains("`fp_critic` is not available to SPEC_CHECKER"));
    assert!(t.steps[5].input.contains("`shell_exec` is not available to ORCHESTRATOR"));
    assert_permissions_hold(&t, true);
}

#[test]
fn duplicate_checker_hidden_when_disabled() {
    let engines = engines();
    let toolbox = Toolbox { engines: &engines, spec: None, memory: None };
    let config = OracleConfig { duplicate_check: false, ..config() };
    let script = vec![
        ScriptEntry::call("", "duplicate_checker", json!({"task": "t"})),
        ScriptEntry::answer("not available to ORCHESTRATOR", report(0.9)),
    ];
    let t = triage(&finding("f1"), &toolbox, &config, &mut ScriptedEndpoint::new(script));
    assert_eq!(t.actors(), [Actor::Orchestrator, Actor::Orchestrator]);
}

#[test]
fn malformed_answer_is_retried_once() {
    let t = run(
        vec![
            ScriptEntry::answer("", json!({"decision": "REPORT", "confidence": 1.5, "rationale": "sure"})),
            ScriptEntry::answer("outside [0, 1]", report(0.9)),
        ],
        None,
        None,
    );
    assert_eq!(t.steps.len(), 2);
    assert_eq!(t.verdict.unwrap().confidence, 0.9);

    let t = run(
        vec![
            ScriptEntry::answer("", json!("looks like a bug to me")),
            ScriptEntry::answer("", json!({"decision": "MAYBE", "confidence": 0.5, "rationale": "?"})),
            ScriptEntry::answer("", report(0.9)),
        ],
        None,
        None,
    );
    assert_eq!(t.terminated_by, TerminatedBy::Error);
    assert!(t.verdict.is_none());
    assert_eq!(t.steps.len(), 2);
    assert!(t.error.unwrap().contains("MAYBE"));
}

#[test]
fn transport_failure_ends_in_error() {
    let t = run(
        vec![
            ScriptEntry::call("", "terminal", json!({"engine_name": "alpha", "code": "1"})),
            ScriptEntry {
                pattern: String::new(),
                respond: ScriptResponse::Error("connection reset".into()),
                repeat: false,
                usage: None,
            },
        ],
        None,
        None,
    );
    assert_eq!(t.terminated_by, TerminatedBy::Error);
    assert!(t.verdict.is_none());
    assert_eq!(t.steps.len(), 2);
    assert!(t.error.unwrap().contains("connection reset"));

    let t = run(vec![], None, None);
    assert_eq!(t.terminated_by, TerminatedBy::Error);
    assert!(t.steps.is_empty());
}

#[test]
fn low_confidence_report_downgraded() {
    let engines = engines();
    let memory = Mutex::new(IssueStore::in_memory());
    let toolbox = Toolbox { engines: &engines, spec: None, memory: Some(&memory) };
    let config = OracleConfig { min_confidence: 0.5, ..config() };
    let mut ep = ScriptedEndpoint::new(vec![ScriptEntry::answer("", report(0.3))]);
    let v = triage(&finding("f1"), &toolbox, &config, &mut ep).verdict.unwrap();
    assert_eq!(v.decision, Decision::Skip);
    assert_eq!(v.confidence, 0.3);
    assert!(memory.lock().unwrap().is_empty());
}

fn sequential_script(run_code: bool) -> Vec<ScriptEntry> {
    vec![
        ScriptEntry::answer("Stage 1 of 4", json!("beta exits 3 and prints to stderr while alpha prints")),
        ScriptEntry::call("Stage 2 of 4", "spec", json!({"query": "Function.prototype.toString"})),
        if run_code {
            ScriptEntry::call("Stage 3 of 4", "terminal", json!({"engine_name": "all", "code": "print(1)"}))
        } else {
            ScriptEntry::answer("Stage 3 of 4", json!("no execution needed"))
        },
        ScriptEntry::answer("Stage 4 of 4", report(0.8)),
    ]
}

#[test]
fn sequential_runs_four_stages() {
    let index = SpecIndex::build(SPEC).unwrap();
    let engines = engines();
    let toolbox = Toolbox { engines: &engines, spec: Some(&index), memory: None };
    let f = finding("f1");

    let t = triage_sequential(&f, &toolbox, &config(), &mut ScriptedEndpoint::new(sequential_script(false)));
    use Actor::*;
    assert_eq!(t.model_calls(), 4);
    assert_eq!(t.tool_calls(ToolTerminal), 0);
    assert_eq!(t.actors(), [Orchestrator, Orchestrator, ToolSpec, Orchestrator, Orchestrator]);
    assert_eq!(t.verdict.as_ref().unwrap().decision, Decision::Report);

    let t = triage_sequential(&f, &toolbox, &config(), &mut ScriptedEndpoint::new(sequential_script(true)));
    assert_eq!(t.model_calls(), 4);
    assert_eq!(t.tool_calls(ToolTerminal), 1);
    assert_permissions_hold(&t, false);

    // A plain-text query in stage 2 is still sent to the spec tool.
    let mut script = sequential_script(false);
    script[1] = ScriptEntry::answer("Stage 2 of 4", json!("String.prototype.search"));
    let t = triage_sequential(&f, &toolbox, &config(), &mut ScriptedEndpoint::new(script));
    assert!(t.steps[2].output.starts_with("[22.1.3.22]"));
}

#[test]
fn early_decision_costs_fewer_tokens_than_sequential() {
    let index = SpecIndex::build(SPEC).unwrap();
    let engines = engines();
    let toolbox = Toolbox { engines: &engines, spec: Some(&index), memory: None };
    let f = finding("f1");
    let agentic = triage(&f, &toolbox, &config(), &mut ScriptedEndpoint::new(vec![ScriptEntry::answer("", report(0.8))]));
    let sequential = triage_sequential(&f, &toolbox, &config(), &mut ScriptedEndpoint::new(sequential_script(false)));
    assert!(agentic.token_count > 0);
    assert!(agentic.token_count < sequential.token_count, "{} vs {}", agentic.token_count, sequential.token_count);
    assert_eq!(agentic.token_count, agentic.input_tokens + agentic.output_tokens);
}

#[test]
fn replay_is_deterministic() {
    let index = SpecIndex::build(SPEC).unwrap();
    let script = || {
        vec![
            ScriptEntry::call("[actor: ORCHESTRATOR]", "discrepancy_finder", json!({"task": "characterise"})),
            ScriptEntry::call("[actor: DISCREPANCY_FINDER]", "terminal", json!({"engine_name": "all", "code": "print(1)"})),
            ScriptEntry::answer("[actor: DISCREPANCY_FINDER]", json!("beta rejects print")),
            ScriptEntry::call("[actor: ORCHESTRATOR]", "fp_critic", json!({"task": "review"})),
            ScriptEntry::answer("[actor: FP_CRITIC]", json!("GROUNDED")),
            ScriptEntry::answer("[actor: ORCHESTRATOR]", report(0.75)),
        ]
    };
    let a = run(script(), Some(&index), None);
    let b = run(script(), Some(&index), None);
    assert_eq!(
        serde_json::to_string(&a.without_timing()).unwrap(),
        serde_json::to_string(&b.without_timing()).unwrap()
    );
    assert_eq!(a.steps.len(), 7);
}

/// Endpoint replying with arbitrary tool names, to exercise the matrix.
struct Chaos {
    names: Vec<String>,
    i: usize,
}

impl ModelEndpoint for Chaos {
    fn complete(&mut self, request: &CompletionRequest) -> Result<ModelResponse, EndpointError> {
        let mut inner = ScriptedEndpoint::new(vec![match self.names.get(self.i) {
            Some(name) if name == "ANSWER" => ScriptEntry::answer("", json!("plain answer")),
            Some(name) => ScriptEntry::call("", name, json!({"task": "t", "query": "TypeError", "engine_name": "alpha", "code": "1"})),
            None => ScriptEntry::answer("", report(0.5)),
        }]);
        self.i += 1;
        inner.complete(request)
    }
}

const NAMES: &[&str] = &[
    "terminal", "spec", "top_k_similar", "discrepancy_finder", "spec_checker", "confidence_checker",
    "duplicate_checker", "fp_critic", "minimizer", "bogus", "ANSWER",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_session_terminates_within_limits_and_permissions(
        picks in prop::collection::vec(0..NAMES.len(), 0..60),
        limit in 1usize..40,
        dup in any::<bool>(),
    ) {
        let index = SpecIndex::build(SPEC).unwrap();
        let memory = Mutex::new(IssueStore::in_memory());
        let engines = vec![EngineConfig::new("alpha", "/bin/echo", &["{file}"])];
        let toolbox = Toolbox { engines: &engines, spec: Some(&index), memory: Some(&memory) };
        let config = OracleConfig {
            step_limit: limit,
            sub_agent_step_limit: limit.min(5),
            duplicate_check: dup,
            ..config()
        };
        let mut ep = Chaos { names: picks.iter().map(|&i| NAMES[i].to_string()).collect(), i: 0 };
        let t = triage(&finding_static(), &toolbox, &config, &mut ep);
        prop_assert!(t.steps.len() <= limit);
        prop_assert_eq!(t.verdict.is_some(), t.terminated_by != TerminatedBy::Error);
        if t.terminated_by == TerminatedBy::StepLimit {
            prop_assert_eq!(t.steps.len(), limit);
        }
        assert_permissions_hold(&t, dup);
    }
}

fn finding_static() -> Finding {
    use difftriage_core::corpus::EngineResult;
    let r = |name: &str, out: &str| EngineResult {
        engine_name: name.into(),
        stdout: out.into(),
        stderr: String::new(),
        exit_code: 0,
        wall_time_ms: 0,
        timed_out: false,
    };
    Finding {
        id: "fs".into(),
        snippet: "print(1)".into(),
        engine_results: vec![r("alpha", "1"), r("beta", "2")],
        created_at: 0,
    }
}
