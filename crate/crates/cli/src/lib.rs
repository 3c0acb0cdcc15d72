//! `ldiff`: batch front end for the diffusion library.
//!
//! Exit codes: 0 when every requested check passes, 1 when a check fails or
//! the numerics break down, 2 for configuration problems, 3 when the model
//! violates an assumption of the theory (the structured error is embedded in
//! the report).

pub mod commands;
pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use config::{load, ConfigError, LoadedConfig, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ASSUMPTION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ldiff", version, about = "Diffusion constants of translation-invariant Lindblad models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Monte Carlo seed (overrides `mc.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Write files only; nothing on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Admissibility checks for the model.
    Validate,
    /// Drift, diffusion matrix, Green-Kubo matrix and gap.
    Analyze,
    /// Eigenvalues of the zero fiber (or of `L_p`) as CSV.
    Spectrum,
    /// Finite-time moments and characteristic-function distance as CSV.
    Evolve,
    /// Quadratic fit of the leading fiber eigenvalue.
    Fit,
    /// Monte Carlo estimate (Green-Kubo α, or the classical particle law).
    Mc,
    /// Agreement table across all σ routes.
    Crosscheck,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Analyze => "analyze",
            Command::Spectrum => "spectrum",
            Command::Evolve => "evolve",
            Command::Fit => "fit",
            Command::Mc => "mc",
            Command::Crosscheck => "crosscheck",
        }
    }
}

/// What a command produced.
pub struct Outcome {
    pub exit: i32,
    pub result: Value,
    pub error: Option<Value>,
    /// Extra CSV files: name and rows (first row is the header).
    pub tables: Vec<(String, Vec<Vec<String>>)>,
    /// Run parameters copied into the manifest.
    pub manifest: Value,
}

impl Outcome {
    pub fn ok(result: Value) -> Self {
        Outcome {
            exit: EXIT_OK,
            result,
            error: None,
            tables: vec![],
            manifest: Value::Null,
        }
    }

    pub fn from_error(e: &lindblad_diffusion::Error) -> Self {
        let exit = if e.is_assumption_violation() {
            EXIT_ASSUMPTION
        } else if e.is_usage_error() {
            EXIT_CONFIG
        } else {
            EXIT_CHECK_FAILED
        };
        Outcome {
            exit,
            result: Value::Null,
            error: Some(e.to_json()),
            tables: vec![],
            manifest: Value::Null,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()
}

fn report_json(cmd: Command, cfg: &LoadedConfig, out: &Outcome) -> Value {
    json!({
        "command": cmd.name(),
        "version": lindblad_diffusion::VERSION,
        "config_sha256": sha256_hex(&cfg.raw),
        "model": cfg.model_doc,
        "grid": {"d": cfg.grid.dim(), "N": cfg.grid.n()},
        "status": if out.exit == EXIT_OK { "pass" } else { "fail" },
        "exit_code": out.exit,
        "result": out.result,
        "error": out.error,
    })
}

fn config_failure(quiet: bool, msg: &str) -> i32 {
    if !quiet {
        eprintln!("ldiff: configuration error: {msg}");
        let body = json!({"status": "fail", "exit_code": EXIT_CONFIG, "error": {"kind": "ConfigError", "message": msg}});
        let _ = std::io::stdout().write_all(format!("{body}\n").as_bytes());
    }
    EXIT_CONFIG
}

/// Parse-free entry point; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let Some(path) = cli.config.clone() else {
        return config_failure(cli.quiet, "--config PATH is required");
    };
    let mut cfg = match load(&path) {
        Ok(c) => c,
        Err(e) => return config_failure(cli.quiet, &e.0),
    };
    if let Some(seed) = cli.seed {
        cfg.config.mc.seed = seed;
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.config.output.clone())
        .unwrap_or_else(|| PathBuf::from("ldiff-out"));
    if let Err(e) = fs::create_dir_all(&out_dir) {
        return config_failure(cli.quiet, &format!("cannot create {}: {e}", out_dir.display()));
    }

    let started = unix_now();
    let outcome = commands::dispatch(cli.command, &cfg);
    let finished = unix_now();

    let report = report_json(cli.command, &cfg, &outcome);
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    let report_path = out_dir.join(format!("{}.json", cli.command.name()));
    let mut io_failed = fs::write(&report_path, &text).is_err();
    for (name, rows) in &outcome.tables {
        io_failed |= write_csv(&out_dir.join(name), rows).is_err();
    }
    let manifest = json!({
        "command": cli.command.name(),
        "version": lindblad_diffusion::VERSION,
        "config_path": path.display().to_string(),
        "config_sha256": sha256_hex(&cfg.raw),
        "model_sha256": sha256_hex(serde_json::to_string(&cfg.model_doc).unwrap_or_default().as_bytes()),
        "run": outcome.manifest,
        "threads": rayon::current_num_threads(),
        "started_unix": started,
        "finished_unix": finished,
        "report": report_path.display().to_string(),
    });
    io_failed |= fs::write(
        out_dir.join(format!("{}.manifest.json", cli.command.name())),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )
    .is_err();
    if io_failed {
        if !cli.quiet {
            eprintln!("ldiff: failed to write outputs to {}", out_dir.display());
        }
        return EXIT_CHECK_FAILED;
    }
    if !cli.quiet {
        print!("{text}");
    }
    outcome.exit
}
