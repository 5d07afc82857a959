//! Batch front-end for twistlab: parses a `cfg/1` config, runs one
//! pipeline inside a sized worker pool and writes its artifacts together
//! with a `manifest/1` run manifest.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use commands::Check;
pub use config::{Command, ExperimentConfig};
pub use error::{CliError, ErrorReport};

use output::{sha256_hex, to_json, write_file};

pub const MANIFEST_SCHEMA: &str = "manifest/1";
/// Worker-count environment variable.
pub const THREADS_VAR: &str = "RTL_THREADS";

/// One command-line invocation.
#[derive(Clone, Debug, Default)]
pub struct Invocation {
    pub command: Option<Command>,
    pub config: PathBuf,
    /// Overrides `output_dir` from the config.
    pub out: Option<PathBuf>,
    /// Overrides `seed` from the config.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Record of one run; everything except `timings` and `threads` is
/// reproducible from the config and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: Command,
    pub library_version: String,
    pub config: serde_json::Value,
    pub seeds: std::collections::BTreeMap<String, u64>,
    pub threads: usize,
    pub timings: Vec<Timing>,
    pub outputs: Vec<OutputDigest>,
    pub checks: Vec<Check>,
    pub exit_code: i32,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub exit_code: i32,
    pub output_dir: Option<PathBuf>,
    pub manifest: Option<RunManifest>,
    pub error: Option<ErrorReport>,
}

fn fail(err: CliError, dir: Option<&Path>) -> RunResult {
    let report = err.report();
    if let Some(d) = dir {
        // Best effort: the directory may be the thing that failed.
        let _ = std::fs::create_dir_all(d).and_then(|_| std::fs::write(d.join("error.json"), to_json(&report)));
    }
    RunResult { exit_code: err.exit_code(), output_dir: dir.map(Path::to_path_buf), manifest: None, error: Some(report) }
}

/// Parses, runs and writes one experiment.
pub fn execute(inv: &Invocation) -> RunResult {
    let Some(command) = inv.command else {
        return fail(CliError::Config { path: "command".into(), message: "no command given".into() }, None);
    };
    let start = Instant::now();
    let mut cfg = match ExperimentConfig::load(&inv.config, command) {
        Ok(c) => c,
        Err(e) => return fail(e, inv.out.as_deref()),
    };
    if let Some(s) = inv.seed {
        cfg.seed = s;
    }
    if let Some(o) = &inv.out {
        cfg.output_dir = o.clone();
    }
    let dir = cfg.output_dir.clone();
    let parse_time = start.elapsed().as_secs_f64();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = inv.threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => return fail(CliError::Config { path: THREADS_VAR.into(), message: e.to_string() }, Some(&dir)),
    };
    let compute = Instant::now();
    let (outcome, threads) = pool.install(|| (commands::run(&cfg), rayon::current_num_threads()));
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => return fail(e, Some(&dir)),
    };
    let compute_time = compute.elapsed().as_secs_f64();

    let write = Instant::now();
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return fail(CliError::Output { path: dir.display().to_string(), message: e.to_string() }, None);
    }
    let mut outputs = Vec::with_capacity(outcome.files.len());
    for (name, bytes) in &outcome.files {
        if let Err(e) = write_file(&dir, name, bytes) {
            return fail(e, Some(&dir));
        }
        outputs.push(OutputDigest { file: name.clone(), bytes: bytes.len(), sha256: sha256_hex(bytes) });
    }
    let exit_code = if outcome.checks.iter().all(|c| c.pass) { 0 } else { 2 };
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        command,
        library_version: twistlab::VERSION.into(),
        config: serde_json::to_value(&cfg).expect("config serializes"),
        seeds: outcome.seeds,
        threads,
        timings: vec![
            Timing { phase: "parse".into(), seconds: parse_time },
            Timing { phase: "compute".into(), seconds: compute_time },
            Timing { phase: "write".into(), seconds: write.elapsed().as_secs_f64() },
        ],
        outputs,
        checks: outcome.checks,
        exit_code,
    };
    if let Err(e) = write_file(&dir, "manifest.json", &to_json(&manifest)) {
        return fail(e, Some(&dir));
    }
    RunResult { exit_code, output_dir: Some(dir), manifest: Some(manifest), error: None }
}

/// Reads [`THREADS_VAR`]; unset means the pool default.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config { path: THREADS_VAR.into(), message: format!("expected a positive integer, got {s:?}") }),
        },
    }
}
