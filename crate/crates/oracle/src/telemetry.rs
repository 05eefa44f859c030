//! Aggregate statistics over triage transcripts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::OracleConfig;
use crate::transcript::{Actor, TerminatedBy, Transcript};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryReport {
    pub cases: usize,
    pub median_steps: f64,
    /// Nearest-rank 95th percentile of step counts.
    pub p95_steps: usize,
    pub max_steps: usize,
    /// Steps taken by each actor, summed over all transcripts.
    pub actor_steps: BTreeMap<Actor, usize>,
    /// `transitions[a][b]`: how often a step by `a` is directly followed by one by `b`.
    pub transitions: BTreeMap<Actor, BTreeMap<Actor, usize>>,
    pub terminations: BTreeMap<String, usize>,
    pub mean_tokens: f64,
    pub mean_input_tokens: f64,
    pub mean_output_tokens: f64,
    pub mean_wall_time_ms: f64,
    pub cost_per_case: f64,
}

/// Median; an even count averages the two middle values.
pub fn median(sorted: &[usize]) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "median of an empty sample");
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

/// Nearest-rank percentile: the smallest value with at least `p` percent of
/// the sample at or below it.
pub fn percentile_nearest_rank(sorted: &[usize], p: f64) -> usize {
    let n = sorted.len();
    assert!(n > 0, "percentile of an empty sample");
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Returns `None` for an empty transcript list.
pub fn telemetry_report(transcripts: &[Transcript], config: &OracleConfig) -> Option<TelemetryReport> {
    if transcripts.is_empty() {
        return None;
    }
    let n = transcripts.len() as f64;
    let mut lengths: Vec<usize> = transcripts.iter().map(|t| t.steps.len()).collect();
    lengths.sort_unstable();

    let mut actor_steps = BTreeMap::new();
    let mut transitions: BTreeMap<Actor, BTreeMap<Actor, usize>> = BTreeMap::new();
    let mut terminations = BTreeMap::new();
    for t in transcripts {
        for step in &t.steps {
            *actor_steps.entry(step.actor).or_insert(0) += 1;
        }
        for pair in t.steps.windows(2) {
            *transitions.entry(pair[0].actor).or_default().entry(pair[1].actor).or_insert(0) += 1;
        }
        let key = match t.terminated_by {
            TerminatedBy::Decision => "DECISION",
            TerminatedBy::StepLimit => "STEP_LIMIT",
            TerminatedBy::Error => "ERROR",
        };
        *terminations.entry(key.to_string()).or_insert(0) += 1;
    }
    let sum = |f: fn(&Transcript) -> u64| transcripts.iter().map(f).sum::<u64>() as f64;
    let total_cost: f64 = transcripts.iter().map(|t| config.cost(t.input_tokens, t.output_tokens)).sum();
    Some(TelemetryReport {
        cases: transcripts.len(),
        median_steps: median(&lengths),
        p95_steps: percentile_nearest_rank(&lengths, 95.0),
        max_steps: *lengths.last().expect("non-empty"),
        actor_steps,
        transitions,
        terminations,
        mean_tokens: sum(|t| t.token_count) / n,
        mean_input_tokens: sum(|t| t.input_tokens) / n,
        mean_output_tokens: sum(|t| t.output_tokens) / n,
        mean_wall_time_ms: sum(|t| t.wall_time_ms) / n,
        cost_per_case: total_cost / n,
    })
}

pub fn render_report(report: &TelemetryReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "cases            {}", report.cases);
    let _ = writeln!(out, "median steps     {}", report.median_steps);
    let _ = writeln!(out, "p95 steps        {}", report.p95_steps);
    let _ = writeln!(out, "max steps        {}", report.max_steps);
    let _ = writeln!(out, "tokens per case  {:.1}", report.mean_tokens);
    let _ = writeln!(out, "time per case    {:.1} ms", report.mean_wall_time_ms);
    let _ = writeln!(out, "cost per case    ${:.4}", report.cost_per_case);
    let _ = writeln!(out, "\nterminations");
    for (k, v) in &report.terminations {
        let _ = writeln!(out, "  {k:<20} {v}");
    }
    let _ = writeln!(out, "\nsteps by actor");
    for (k, v) in &report.actor_steps {
        let _ = writeln!(out, "  {:<20} {v}", k.as_str());
    }
    let _ = writeln!(out, "\ntransitions");
    for (from, row) in &report.transitions {
        for (to, count) in row {
            let _ = writeln!(out, "  {:<20} -> {:<20} {count}", from.as_str(), to.as_str());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transcript::{Mode, Step};

    fn transcript(actors: &[Actor], input_tokens: u64, output_tokens: u64) -> Transcript {
        Transcript {
            finding_id: "f".into(),
            mode: Mode::Agentic,
            steps: actors
                .iter()
                .map(|&actor| Step { actor, input: String::new(), output: String::new() })
                .collect(),
            token_count: input_tokens + output_tokens,
            input_tokens,
            output_tokens,
            wall_time_ms: 10,
            terminated_by: TerminatedBy::Decision,
            verdict: None,
            error: None,
        }
    }

    #[test]
    fn percentiles() {
        assert_eq!(median(&[6]), 6.0);
        assert_eq!(median(&[2, 6, 100]), 6.0);
        assert_eq!(median(&[2, 4, 6, 100]), 5.0);
        assert_eq!(percentile_nearest_rank(&[2, 6, 100], 95.0), 100);
        assert_eq!(percentile_nearest_rank(&[6], 95.0), 6);
        let twenty: Vec<usize> = (1..=20).collect();
        assert_eq!(percentile_nearest_rank(&twenty, 95.0), 19);
        assert_eq!(percentile_nearest_rank(&twenty, 100.0), 20);
    }

    #[test]
    fn report_counts() {
        use Actor::*;
        let ts = vec![
            transcript(&[Orchestrator, ToolTerminal, Orchestrator, SpecChecker, ToolSpec, SpecChecker], 6000, 500),
            transcript(&[Orchestrator, Orchestrator], 1000, 100),
        ];
        let config = OracleConfig {
            input_price_per_1k: 0.0003,
            output_price_per_1k: 0.0025,
            ..OracleConfig::default()
        };
        let r = telemetry_report(&ts, &config).unwrap();
        assert_eq!(r.cases, 2);
        assert_eq!(r.median_steps, 4.0);
        assert_eq!(r.actor_steps[&Orchestrator], 4);
        assert_eq!(r.transitions[&Orchestrator][&ToolTerminal], 1);
        assert_eq!(r.transitions[&Orchestrator][&Orchestrator], 1);
        assert_eq!(r.transitions[&ToolSpec][&SpecChecker], 1);
        assert_eq!(r.mean_tokens, 3800.0);
        let expected = (0.00305 + 0.00055) / 2.0;
        assert!((r.cost_per_case - expected).abs() < 1e-12);
        assert!(telemetry_report(&[], &config).is_none());
        assert!(render_report(&r).contains("ORCHESTRATOR"));
    }
}
