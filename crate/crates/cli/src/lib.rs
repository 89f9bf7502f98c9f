//! Command-line experiment runner: configs in, CSV/JSON artifacts and a run
//! manifest out.

// `!(a < b)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod presets;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{exit, CliError};
use crate::output::{json_bytes, unix_millis, write_atomic, RunManifest, RunOutput};

pub const DEFAULT_SEED: u64 = 42;
pub const OUT_DIR_ENV: &str = "CHERNOFF_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "chernoff", version, about = "Chernoff product experiments on the circle and sphere")]
pub struct Cli {
    /// Output directory; each run writes into a subdirectory named after its config.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,

    /// Seed for every random draw; overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sup-norm convergence of the Chernoff product.
    Converge(ConfigArg),
    /// Short-time expansion coefficients against curvature predictions.
    Asymptotics(ConfigArg),
    /// Monte Carlo finite-dimensional distributions of the conditioned chain.
    McFdd(ConfigArg),
    /// Off-partition density normalization and shell limits.
    DensityCheck(ConfigArg),
    /// Runs every shipped preset (or every config in a directory).
    RunAllPresets(PresetsArg),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct PresetsArg {
    /// Directory of configs to run instead of the built-in presets.
    #[arg(long)]
    pub presets: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Converge(_) => "converge",
            Command::Asymptotics(_) => "asymptotics",
            Command::McFdd(_) => "mc-fdd",
            Command::DensityCheck(_) => "density-check",
            Command::RunAllPresets(_) => "run-all-presets",
        }
    }
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be positive");
            return exit::CONFIG;
        }
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let command = cli.command.name();
    match &cli.command {
        Command::RunAllPresets(args) => {
            let presets = match &args.presets {
                Some(dir) => presets::load_dir(dir),
                None => Ok(presets::builtin()),
            };
            match presets {
                Ok(presets) => run_all(&presets, &cli.out, cli.seed),
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Command::Converge(arg)
        | Command::Asymptotics(arg)
        | Command::McFdd(arg)
        | Command::DensityCheck(arg) => {
            let config = match ExperimentConfig::from_path(&arg.config) {
                Ok(c) if c.experiment.command() == command => c,
                Ok(c) => {
                    let e = CliError::config(
                        "experiment.command",
                        format!("config describes {}, not {command}", c.experiment.command()),
                    );
                    eprintln!("error: {e}");
                    return e.exit_code();
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    return e.exit_code();
                }
            };
            execute(&config, &cli.out, cli.seed).code
        }
    }
}

/// Result of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub command: String,
    pub code: u8,
    pub passed: bool,
}

/// Runs one config into `out_root/<name>/` and always writes a manifest there.
pub fn execute(config: &ExperimentConfig, out_root: &Path, seed: Option<u64>) -> RunSummary {
    let seed = seed.or(config.seed).unwrap_or(DEFAULT_SEED);
    let started = unix_millis();
    let mut out = RunOutput::new(out_root.join(&config.name));
    let result = commands::run_experiment(config, seed, &mut out);
    let (code, error) = match &result {
        Ok(()) if out.passed() => (exit::OK, None),
        Ok(()) => (exit::ASSERTION, None),
        Err(e) => (e.exit_code(), Some(e.to_string())),
    };
    for check in &out.checks {
        println!(
            "{} {} {}: {}",
            if check.passed { "PASS" } else { "FAIL" },
            config.name,
            check.name,
            check.detail
        );
    }
    if let Some(e) = &error {
        eprintln!("error: {}: {e}", config.name);
    }
    let manifest = RunManifest {
        tool: "chernoff".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: config.experiment.command().into(),
        config: config.clone(),
        seed,
        threads: rayon::current_num_threads(),
        started_unix_ms: started,
        finished_unix_ms: unix_millis(),
        outputs: out.files().to_vec(),
        passed: code == exit::OK,
        checks: out.checks.clone(),
        error,
    };
    let code = match manifest.write(out.dir()) {
        Ok(_) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if code == exit::OK { e.exit_code() } else { code }
        }
    };
    RunSummary {
        name: config.name.clone(),
        command: config.experiment.command().into(),
        code,
        passed: code == exit::OK,
    }
}

/// Runs `(file name, JSON)` presets in order and writes `summary.json`.
/// The exit code is the most severe one: config, then numerical, then assertion.
pub fn run_all(presets: &[(String, String)], out_root: &Path, seed: Option<u64>) -> u8 {
    let mut runs = Vec::with_capacity(presets.len());
    for (file, json) in presets {
        let summary = match ExperimentConfig::from_json(json) {
            Ok(config) => execute(&config, out_root, seed),
            Err(e) => {
                eprintln!("error: {file}: {e}");
                RunSummary {
                    name: file.clone(),
                    command: String::new(),
                    code: e.exit_code(),
                    passed: false,
                }
            }
        };
        runs.push(summary);
    }
    let code = [exit::IO, exit::CONFIG, exit::NUMERICAL, exit::ASSERTION]
        .into_iter()
        .find(|c| runs.iter().any(|r| r.code == *c))
        .unwrap_or(exit::OK);
    #[derive(Serialize)]
    struct Summary<'a> {
        seed: Option<u64>,
        passed: bool,
        runs: &'a [RunSummary],
    }
    let summary = Summary {
        seed,
        passed: code == exit::OK,
        runs: &runs,
    };
    let path = out_root.join("summary.json");
    match json_bytes(&summary).and_then(|bytes| write_atomic(&path, &bytes)) {
        Ok(()) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if code == exit::OK { e.exit_code() } else { code }
        }
    }
}
