//! Runs snippets on engine binaries and turns the observations into findings.
//!
//! Each snippet is written to a temporary file whose path is substituted for
//! [`FILE_PLACEHOLDER`] in the engine's argument template. Every child runs in
//! its own process group so a timeout can kill the whole tree.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::corpus::{is_differential, EngineResult, Finding, TIMEOUT_EXIT_CODE};

/// Token in `args_template` replaced by the snippet file path.
pub const FILE_PLACEHOLDER: &str = "{file}";

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;

/// Per-stream capture limit.
pub const MAX_CAPTURE_BYTES: usize = 1024 * 1024;

pub const TRUNCATION_MARKER: &str = "\n[output truncated at 1048576 bytes]\n";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("failed to spawn engine `{engine}` ({command}): {source}")]
    Spawn {
        engine: String,
        command: String,
        #[source]
        source: io::Error,
    },

    #[error("at least 2 engines are required, got {0}")]
    TooFewEngines(usize),

    #[error("invalid engine configuration: {0}")]
    Config(String),

    #[error("parallelism must be at least 1")]
    Parallelism,

    #[error("engine `{engine}`: {source}")]
    Io {
        engine: String,
        #[source]
        source: io::Error,
    },
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

/// One engine under test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub name: String,
    pub command: PathBuf,
    pub args_template: Vec<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

impl EngineConfig {
    pub fn new(name: impl Into<String>, command: impl Into<PathBuf>, args: &[&str]) -> Self {
        Self {
            name: name.into(),
            command: command.into(),
            args_template: args.iter().map(|s| s.to_string()).collect(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            env: BTreeMap::new(),
        }
    }

    pub fn with_timeout_ms(mut self, timeout_ms: u64) -> Self {
        self.timeout_ms = timeout_ms;
        self
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.name.trim().is_empty() {
            return Err(RunError::Config("engine name is empty".into()));
        }
        if self.timeout_ms == 0 {
            return Err(RunError::Config(format!("engine `{}`: timeout must be > 0", self.name)));
        }
        let occurrences: usize = self
            .args_template
            .iter()
            .map(|a| a.matches(FILE_PLACEHOLDER).count())
            .sum();
        if occurrences != 1 {
            return Err(RunError::Config(format!(
                "engine `{}`: args_template must contain {FILE_PLACEHOLDER} exactly once (found {occurrences})",
                self.name
            )));
        }
        Ok(())
    }

    fn args_for(&self, file: &Path) -> Vec<String> {
        let file = file.to_string_lossy();
        self.args_template
            .iter()
            .map(|a| a.replace(FILE_PLACEHOLDER, &file))
            .collect()
    }
}

/// Validates a roster: each engine individually plus unique names.
pub fn validate_engines(engines: &[EngineConfig]) -> Result<(), RunError> {
    let mut names = HashSet::new();
    for engine in engines {
        engine.validate()?;
        if !names.insert(engine.name.as_str()) {
            return Err(RunError::Config(format!("duplicate engine name `{}`", engine.name)));
        }
    }
    Ok(())
}

/// Loads the engine roster (a JSON list of [`EngineConfig`]).
pub fn load_engines(path: &Path) -> Result<Vec<EngineConfig>, RunError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
        engine: path.display().to_string(),
        source,
    })?;
    let engines: Vec<EngineConfig> = serde_json::from_str(&text)
        .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
    validate_engines(&engines)?;
    Ok(engines)
}

/// A snippet to execute, identified by the id its finding will carry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snippet {
    pub id: String,
    pub source: String,
}

impl Snippet {
    pub fn new(id: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            source: source.into(),
        }
    }
}

/// Reads every regular file of `dir` as a snippet, ordered by file name. The
/// id is the file name without its final extension.
pub fn load_snippet_dir(dir: &Path) -> io::Result<Vec<Snippet>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let source = std::fs::read_to_string(&path)?;
            Ok(Snippet { id, source })
        })
        .collect()
}

/// Runs `snippet` on one engine.
///
/// A nonzero exit is data, not an error. Failure to spawn the binary is
/// reported as [`RunError::Spawn`]. On timeout the process group is killed and
/// the result has `timed_out = true` and exit code [`TIMEOUT_EXIT_CODE`].
pub fn run_one(engine: &EngineConfig, snippet: &str) -> Result<EngineResult, RunError> {
    let io_err = |source| RunError::Io {
        engine: engine.name.clone(),
        source,
    };
    let mut file = tempfile::Builder::new()
        .prefix("difftriage-")
        .suffix(".js")
        .tempfile()
        .map_err(io_err)?;
    file.write_all(snippet.as_bytes()).map_err(io_err)?;
    file.flush().map_err(io_err)?;

    let mut command = Command::new(&engine.command);
    command
        .args(engine.args_for(file.path()))
        .envs(&engine.env)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);

    let started = Instant::now();
    let mut child = command.spawn().map_err(|source| RunError::Spawn {
        engine: engine.name.clone(),
        command: engine.command.display().to_string(),
        source,
    })?;

    let stdout = capture(child.stdout.take());
    let stderr = capture(child.stderr.take());

    let timeout = Duration::from_millis(engine.timeout_ms);
    let status = match child.wait_timeout(timeout).map_err(io_err)? {
        Some(status) => {
            // Background descendants would otherwise keep the pipes open.
            signal_group(&child);
            Some(status)
        }
        None => {
            signal_group(&child);
            let _ = child.kill();
            let _ = child.wait();
            None
        }
    };
    let stdout = stdout.join().unwrap_or_default();
    let stderr = stderr.join().unwrap_or_default();
    let wall_time_ms = started.elapsed().as_millis() as u64;

    let (exit_code, timed_out) = match status {
        Some(status) => (exit_code_of(status), false),
        None => (TIMEOUT_EXIT_CODE, true),
    };
    Ok(EngineResult {
        engine_name: engine.name.clone(),
        stdout,
        stderr,
        exit_code,
        wall_time_ms,
        timed_out,
    })
}

/// Shell convention: a signal-terminated process reports `128 + signal`.
fn exit_code_of(status: ExitStatus) -> i32 {
    match (status.code(), status.signal()) {
        (Some(code), _) => code,
        (None, Some(signal)) => 128 + signal,
        (None, None) => TIMEOUT_EXIT_CODE,
    }
}

fn signal_group(child: &Child) {
    let pgid = child.id() as libc::pid_t;
    // SAFETY: plain syscall with no memory arguments. The group id equals the
    // child's pid because it was spawned with process_group(0).
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
}

fn capture<R: Read + Send + 'static>(stream: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || match stream {
        Some(stream) => read_capped(stream, MAX_CAPTURE_BYTES),
        None => String::new(),
    })
}

/// Reads the whole stream, keeping at most `cap` bytes. The remainder is
/// drained so the child never blocks on a full pipe.
fn read_capped<R: Read>(mut stream: R, cap: usize) -> String {
    let mut kept = Vec::new();
    let mut buf = [0u8; 8192];
    let mut truncated = false;
    loop {
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                let room = cap.saturating_sub(kept.len());
                if n > room {
                    truncated = true;
                }
                kept.extend_from_slice(&buf[..n.min(room)]);
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => break,
        }
    }
    let mut text = String::from_utf8_lossy(&kept).into_owned();
    if truncated {
        text.push_str(TRUNCATION_MARKER);
    }
    text
}

/// Runs `snippet` on every engine and assembles a finding with one result per
/// engine in configuration order. Engines that fail to spawn get a synthetic
/// result with exit code [`crate::corpus::SPAWN_FAILURE_EXIT_CODE`] and empty
/// outputs.
pub fn run_differential(
    engines: &[EngineConfig],
    snippet: &str,
    id: &str,
) -> Result<Finding, RunError> {
    if engines.len() < 2 {
        return Err(RunError::TooFewEngines(engines.len()));
    }
    let engine_results = engines
        .iter()
        .map(|engine| match run_one(engine, snippet) {
            Ok(result) => Ok(result),
            Err(RunError::Spawn { .. }) => Ok(EngineResult::spawn_failure(&engine.name)),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Finding {
        id: id.to_string(),
        snippet: snippet.to_string(),
        engine_results,
        created_at: crate::unix_now(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusRunOptions {
    pub parallelism: usize,
    /// Keep findings whose engines all agree.
    pub keep_all: bool,
}

impl Default for CorpusRunOptions {
    fn default() -> Self {
        Self {
            parallelism: 1,
            keep_all: false,
        }
    }
}

/// Runs every snippet differentially, `parallelism` snippets at a time. The
/// output follows input order. Non-differential findings are dropped unless
/// `keep_all` is set.
pub fn run_corpus(
    engines: &[EngineConfig],
    snippets: &[Snippet],
    options: CorpusRunOptions,
) -> Result<Vec<Finding>, RunError> {
    if options.parallelism == 0 {
        return Err(RunError::Parallelism);
    }
    if engines.len() < 2 {
        return Err(RunError::TooFewEngines(engines.len()));
    }
    validate_engines(engines)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism)
        .build()
        .map_err(|e| RunError::Config(e.to_string()))?;
    let findings: Vec<Finding> = pool.install(|| {
        snippets
            .par_iter()
            .map(|s| run_differential(engines, &s.source, &s.id))
            .collect::<Result<_, _>>()
    })?;
    Ok(findings
        .into_iter()
        .filter(|f| options.keep_all || is_differential(f).unwrap_or(false))
        .collect())
}
