use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use difftriage_core::corpus::{
    append_jsonl, load_corpus, load_labels, read_jsonl, save_corpus, save_labels, write_jsonl, Finding, Label,
    LabelVerdict,
};
use difftriage_core::memory::IssueStore;
use difftriage_core::propagation::{
    build_clusters_with_vectors, compare_strategies, medoid_worklist, propagate, render_strategy_table,
    vectorize_findings, ClusterOptions, ClusterRecord, Granularity,
};
use difftriage_core::runner::{load_engines, load_snippet_dir, run_corpus, CorpusRunOptions};
use difftriage_core::specindex::SpecIndex;
use difftriage_core::vectorizer::VectorDump;
use difftriage_oracle::telemetry::render_report;
use difftriage_oracle::{telemetry_report, triage, triage_sequential, Decision, OracleConfig, Toolbox, Transcript, Verdict};
use serde::Serialize;

use crate::metrics::{confusion, EvalReport};
use crate::{
    data, ClusterArgs, Command, CompareArgs, CliError, EvalArgs, Io, LabelArgs, ModeArg, PropagateArgs, ReportArgs,
    RunArgs, TriageArgs,
};

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(command: Command, io: &mut Io<'_>) -> Result<()> {
    match command {
        Command::Run(a) => run(a, io),
        Command::Cluster(a) => cluster(a, io),
        Command::Label(a) => label(a, io),
        Command::Propagate(a) => propagate_cmd(a, io),
        Command::Compare(a) => compare(a, io),
        Command::Triage(a) => triage_cmd(a, io),
        Command::Eval(a) => eval(a, io),
        Command::Report(a) => report(a, io),
    }
}

fn say(io: &mut Io<'_>, text: impl AsRef<str>) -> Result<()> {
    writeln!(io.stdout, "{}", text.as_ref()).map_err(data)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(data)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn read_clusters(path: &Path) -> Result<Vec<ClusterRecord>> {
    Ok(read_jsonl(path).map_err(data)?.into_iter().map(|(_, r)| r).collect())
}

fn by_id(labels: Vec<Label>) -> HashMap<String, Label> {
    labels.into_iter().map(|l| (l.finding_id.clone(), l)).collect()
}

fn run(a: RunArgs, io: &mut Io<'_>) -> Result<()> {
    let parallelism = match a.parallelism {
        Some(0) => return Err(CliError::Usage("--parallelism must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let engines = load_engines(&a.engines).map_err(data)?;
    let snippets = load_snippet_dir(&a.snippets).map_err(|e| data(format!("{}: {e}", a.snippets.display())))?;
    let findings = run_corpus(
        &engines,
        &snippets,
        CorpusRunOptions {
            parallelism,
            keep_all: a.keep_all,
        },
    )
    .map_err(data)?;
    save_corpus(&findings, &a.out).map_err(data)?;
    say(io, format!("{} snippets, {} findings written to {}", snippets.len(), findings.len(), a.out.display()))
}

fn cluster(a: ClusterArgs, io: &mut Io<'_>) -> Result<()> {
    if a.k_max < 2 {
        return Err(CliError::Usage("--k-max must be at least 2".into()));
    }
    let findings = load_corpus(&a.findings).map_err(data)?;
    let (records, vectors) = if findings.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let (_, vectors) = vectorize_findings(&findings).map_err(data)?;
        let options = ClusterOptions {
            refine: !a.no_refine,
            k_max: a.k_max,
            seed: a.seed,
        };
        (build_clusters_with_vectors(&findings, &vectors, options).map_err(data)?, vectors)
    };
    write_jsonl(&a.out, &records).map_err(data)?;
    if let Some(path) = &a.dump_vectors {
        let dump: Vec<VectorDump> = findings
            .iter()
            .zip(&vectors)
            .map(|(f, v)| VectorDump {
                finding_id: f.id.clone(),
                entries: v.entries().to_vec(),
            })
            .collect();
        write_jsonl(path, &dump).map_err(data)?;
    }
    let patterns: HashSet<&str> = records.iter().map(|r| r.pattern_key.as_str()).collect();
    say(
        io,
        format!("{} findings, {} exit patterns, {} clusters", findings.len(), patterns.len(), records.len()),
    )
}

/// Parses `BUG <root cause>` or `NO_BUG [root cause]`.
fn parse_label_line(finding_id: &str, line: &str) -> std::result::Result<Label, String> {
    let line = line.trim();
    let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
    let verdict: LabelVerdict = head.to_ascii_uppercase().parse().map_err(|e: String| e)?;
    let label = Label::new(finding_id, verdict, rest.trim());
    label.validate().map_err(|e| e.to_string())?;
    Ok(label)
}

fn show_medoid(io: &mut Io<'_>, finding: &Finding) -> Result<()> {
    let mut text = format!("program:\n{}\n", finding.snippet.trim_end());
    for r in &finding.engine_results {
        text.push_str(&format!(
            "--- {} (exit {}{})\nstdout: {}\nstderr: {}\n",
            r.engine_name,
            r.exit_code,
            if r.timed_out { ", timed out" } else { "" },
            r.stdout.trim_end(),
            r.stderr.trim_end()
        ));
    }
    say(io, text)
}

fn label(a: LabelArgs, io: &mut Io<'_>) -> Result<()> {
    let clusters = read_clusters(&a.clusters)?;
    let existing = if a.labels.exists() {
        load_labels(&a.labels).map_err(data)?
    } else {
        Vec::new()
    };
    let done: HashSet<String> = existing.into_iter().map(|l| l.finding_id).collect();
    let findings: Option<HashMap<String, Finding>> = match &a.findings {
        Some(p) => Some(load_corpus(p).map_err(data)?.into_iter().map(|f| (f.id.clone(), f)).collect()),
        None => None,
    };
    let truth = match &a.truth {
        Some(p) => Some(by_id(load_labels(p).map_err(data)?)),
        None => None,
    };

    let worklist: Vec<&ClusterRecord> =
        medoid_worklist(&clusters).into_iter().filter(|c| !done.contains(&c.medoid_id)).collect();
    let total = worklist.len();
    let mut labeled = 0;
    'clusters: for (i, cluster) in worklist.into_iter().enumerate() {
        let id = &cluster.medoid_id;
        let mut label = match &truth {
            Some(truth) => {
                let t = truth.get(id).ok_or_else(|| data(format!("ground truth has no label for medoid `{id}`")))?;
                Label::new(id.clone(), t.verdict, t.root_cause.clone())
            }
            None => {
                say(
                    io,
                    format!(
                        "[{}/{total}] {} cluster {} ({} findings), medoid {id}",
                        i + 1,
                        cluster.pattern_key,
                        cluster.cluster_id,
                        cluster.finding_ids.len()
                    ),
                )?;
                if let Some(f) = findings.as_ref().and_then(|m| m.get(id)) {
                    show_medoid(io, f)?;
                }
                loop {
                    write!(io.stdout, "BUG <root cause> | NO_BUG [root cause] | quit> ").map_err(data)?;
                    io.stdout.flush().map_err(data)?;
                    let mut line = String::new();
                    if io.stdin.read_line(&mut line).map_err(data)? == 0 || line.trim().eq_ignore_ascii_case("quit") {
                        say(io, "")?;
                        break 'clusters;
                    }
                    match parse_label_line(id, &line) {
                        Ok(label) => break label,
                        Err(e) => say(io, format!("  {e}"))?,
                    }
                }
            }
        };
        label.labeled_at = Some(difftriage_core::unix_now());
        append_jsonl(&a.labels, &label).map_err(data)?;
        labeled += 1;
    }
    say(io, format!("labeled {labeled} medoids, {} remaining", total - labeled))
}

fn propagate_cmd(a: PropagateArgs, io: &mut Io<'_>) -> Result<()> {
    let clusters = read_clusters(&a.clusters)?;
    let medoid_labels = by_id(load_labels(&a.labels).map_err(data)?);
    let mut result = propagate(&clusters, &medoid_labels).map_err(data)?;
    save_labels(&result.labels(), &a.out).map_err(data)?;
    say(io, format!("propagated {} medoid labels to {} findings", clusters.len(), result.propagated.len()))?;
    if let Some(path) = &a.truth {
        let truth = by_id(load_labels(path).map_err(data)?);
        let granularity: Granularity = a.granularity.into();
        let acc = result.evaluate(&truth, granularity).map_err(data)?;
        let name = match granularity {
            Granularity::Binary => "binary",
            Granularity::RootCause => "root-cause",
        };
        say(io, format!("{name} accuracy: {:.2}% ({}/{})", acc.percent(), acc.matched, acc.total))?;
        for (pattern, pct) in &result.per_pattern_accuracy {
            say(io, format!("  {pattern:<24} {pct:.2}%"))?;
        }
    }
    Ok(())
}

fn compare(a: CompareArgs, io: &mut Io<'_>) -> Result<()> {
    if a.k_max < 2 {
        return Err(CliError::Usage("--k-max must be at least 2".into()));
    }
    let findings = load_corpus(&a.findings).map_err(data)?;
    let truth = load_labels(&a.truth).map_err(data)?;
    let report = compare_strategies(&findings, &truth, a.k_max, a.seed).map_err(data)?;
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    say(io, render_strategy_table(&report))
}

fn triage_cmd(a: TriageArgs, io: &mut Io<'_>) -> Result<()> {
    let config = OracleConfig::load(&a.config).map_err(data)?;
    let engines = match &config.engines_path {
        Some(p) => load_engines(p).map_err(data)?,
        None => Vec::new(),
    };
    let spec = match &config.spec_path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| data(format!("{}: {e}", p.display())))?;
            Some(SpecIndex::build(&text).map_err(|e| data(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let memory = Mutex::new(match &config.memory_path {
        Some(p) => IssueStore::open(p).map_err(data)?,
        None => IssueStore::in_memory(),
    });
    let toolbox = Toolbox {
        engines: &engines,
        spec: spec.as_ref(),
        memory: Some(&memory),
    };
    let findings = load_corpus(&a.findings).map_err(data)?;
    if let Some(dir) = &a.transcripts {
        fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    }

    let mut verdicts: Vec<Verdict> = Vec::new();
    let mut errors = 0;
    for finding in &findings {
        if !finding.is_differential().map_err(data)? {
            writeln!(io.stderr, "warning: {} is not differential, skipped", finding.id).map_err(data)?;
            continue;
        }
        let mut endpoint = config.endpoint_for(&finding.id).map_err(data)?;
        let transcript = match a.mode {
            ModeArg::Agentic => triage(finding, &toolbox, &config, endpoint.as_mut()),
            ModeArg::Sequential => triage_sequential(finding, &toolbox, &config, endpoint.as_mut()),
        };
        if let Some(dir) = &a.transcripts {
            write_json(&dir.join(format!("{}.json", finding.id)), &transcript)?;
        }
        match &transcript.verdict {
            Some(v) => verdicts.push(v.clone()),
            None => {
                errors += 1;
                let reason = transcript.error.as_deref().unwrap_or("no verdict");
                writeln!(io.stderr, "warning: {}: {reason}", finding.id).map_err(data)?;
            }
        }
    }
    write_jsonl(&a.out, &verdicts).map_err(data)?;
    let reports = verdicts.iter().filter(|v| v.decision == Decision::Report).count();
    say(
        io,
        format!(
            "triaged {} findings: {reports} REPORT, {} SKIP, {errors} errors",
            verdicts.len() + errors,
            verdicts.len() - reports
        ),
    )
}

fn eval(a: EvalArgs, io: &mut Io<'_>) -> Result<()> {
    let verdicts: Vec<Verdict> = read_jsonl(&a.verdicts).map_err(data)?.into_iter().map(|(_, v)| v).collect();
    let truth = load_labels(&a.truth).map_err(data)?;
    let report = EvalReport::new(confusion(&verdicts, &truth).map_err(data)?);
    write_json(&a.out, &report)?;
    say(io, report.render().trim_end())
}

fn report(a: ReportArgs, io: &mut Io<'_>) -> Result<()> {
    let config = match &a.config {
        Some(p) => OracleConfig::load(p).map_err(data)?,
        None => OracleConfig::default(),
    };
    let mut paths: Vec<_> = fs::read_dir(&a.transcripts)
        .map_err(|e| data(format!("{}: {e}", a.transcripts.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut transcripts = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p).map_err(|e| data(format!("{}: {e}", p.display())))?;
        let t: Transcript = serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", p.display())))?;
        transcripts.push(t);
    }
    let report = telemetry_report(&transcripts, &config)
        .ok_or_else(|| data(format!("no transcripts in {}", a.transcripts.display())))?;
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    say(io, render_report(&report).trim_end())
}
