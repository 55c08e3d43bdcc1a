//! `aldi-is`: configuration-driven benchmark harness for the rare-event
//! estimation toolkit.
//!
//! `aldi-is run <preset|config.toml>` executes the full pipeline the
//! configured number of times and writes per-repetition records plus a
//! summary (CSV or JSON). `aldi-is presets` lists the built-in experiments.

pub mod config;
pub mod emit;
pub mod presets;
pub mod run;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, ExperimentConfig};
use crate::emit::{human_summary, write_output, Format, Output, RunOutput, SweepOutput};
use crate::run::{run_experiment, run_sigma_sweep};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ALDI_IS_OUT";

#[derive(Parser)]
#[command(
    name = "aldi-is",
    version,
    about = "Rare-event probability estimation via interacting Langevin importance sampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a built-in preset or a TOML config file.
    Run(RunArgs),
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// Preset name (see `aldi-is presets`) or path to a TOML config file.
    target: String,
    /// Override a config key by dotted path, e.g. --set sampler.k_min=30.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output file (default: <name>.<ext> in $ALDI_IS_OUT or the working
    /// directory; a config-file `output` key takes precedence over the
    /// default).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Override the repetition count.
    #[arg(long)]
    reps: Option<usize>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for repetition-level parallelism (default: one per
    /// core). Results are identical for any thread count.
    #[arg(long)]
    threads: Option<usize>,
    /// Print only the output path, not the human-readable summary.
    #[arg(long)]
    quiet: bool,
}

/// Resolve the run target to (name, config text).
fn load_target(target: &str) -> Result<(String, String)> {
    if let Some(preset) = presets::find(target) {
        return Ok((preset.name.to_owned(), preset.toml.to_owned()));
    }
    let path = Path::new(target);
    if path.exists() {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("experiment")
            .to_owned();
        return Ok((name, text));
    }
    let known: Vec<&str> = presets::PRESETS.iter().map(|p| p.name).collect();
    Err(anyhow!(
        "{target:?} is neither a preset ({}) nor an existing config file",
        known.join(", ")
    ))
}

/// Pick the output path: `--out`, then the config `output` key, then
/// `<name>.<ext>` in `$ALDI_IS_OUT` or the working directory.
fn output_path(
    arg: Option<PathBuf>,
    cfg: &ExperimentConfig,
    name: &str,
    format: Format,
) -> PathBuf {
    if let Some(path) = arg {
        return path;
    }
    if let Some(path) = &cfg.output {
        return PathBuf::from(path);
    }
    let dir = std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    dir.join(format!("{name}.{}", format.extension()))
}

fn execute_run(args: RunArgs) -> Result<i32> {
    let (name, text) = load_target(&args.target)?;
    let mut cfg = load_config(&text, &args.set)?;
    if let Some(reps) = args.reps {
        cfg.repetitions = reps;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let resolved = cfg.resolve()?;

    let output = {
        let work = || -> Result<Output> {
            if let Some(sweep) = cfg.sweep.clone() {
                let result = run_sigma_sweep(&cfg, &sweep.sigma_r)?;
                Ok(Output::Sweep(SweepOutput {
                    config: cfg.clone(),
                    result,
                }))
            } else {
                let result = run_experiment(&cfg, &resolved);
                Ok(Output::Run(RunOutput {
                    config: cfg.clone(),
                    result,
                }))
            }
        };
        match args.threads {
            Some(threads) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .context("building thread pool")?;
                pool.install(work)?
            }
            None => work()?,
        }
    };

    let path = output_path(args.out, &cfg, &name, args.format);
    write_output(&output, args.format, &path)?;
    if !args.quiet {
        println!("{}", human_summary(&output));
    }
    println!("wrote {}", path.display());

    // An experiment that exceeded its failed-repetition budget still writes
    // its partial records but exits nonzero with an error record.
    if let Output::Run(run) = &output {
        if let Some(reason) = &run.result.invalid {
            print_error_record("experiment_invalid", reason);
            return Ok(1);
        }
    }
    Ok(0)
}

fn execute_presets() -> i32 {
    for preset in presets::PRESETS {
        println!("{:<16} {}", preset.name, preset.summary);
    }
    0
}

/// Emit a machine-readable error record to stdout.
fn print_error_record(kind: &str, message: &str) {
    let record = serde_json::json!({ "error": { "kind": kind, "message": message } });
    println!("{record}");
}

/// CLI entry point; returns the process exit code.
pub fn cli_main() -> i32 {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match execute_run(args) {
            Ok(code) => code,
            Err(e) => {
                print_error_record("run_failed", &format!("{e:#}"));
                1
            }
        },
        Command::Presets => execute_presets(),
    }
}
