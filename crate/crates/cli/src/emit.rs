//! Result serialization: CSV (documented in the README) and JSON, plus the
//! CSV parser used by the round-trip tests.
//!
//! Floating-point values are written with Rust's shortest round-trip
//! formatting, so parsing the emitted text recovers every finite value
//! exactly.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::run::{RepRecord, RunResult, SweepResult};

/// Output document for a single (non-sweep) experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    /// The configuration that produced the results, defaults resolved.
    pub config: ExperimentConfig,
    /// Records, failures, and summary.
    pub result: RunResult,
}

/// Output document for a smoothing-parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    /// The base configuration (each row overrides only the smoothing).
    pub config: ExperimentConfig,
    /// One row per grid point.
    pub result: SweepResult,
}

/// Any output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Output {
    /// Single experiment.
    Run(RunOutput),
    /// Smoothing sweep.
    Sweep(SweepOutput),
}

/// Serialization format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    /// Rows plus a key-value summary block; config echoed in comments.
    Csv,
    /// One document mirroring the CSV fields exactly.
    Json,
}

impl Format {
    /// Conventional file extension.
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Render an output document in the requested format.
pub fn render(output: &Output, format: Format) -> Result<String> {
    match format {
        Format::Json => {
            let mut text =
                serde_json::to_string_pretty(output).context("serializing output")?;
            text.push('\n');
            Ok(text)
        }
        Format::Csv => Ok(match output {
            Output::Run(run) => run_csv(run),
            Output::Sweep(sweep) => sweep_csv(sweep),
        }),
    }
}

/// Write a rendered document, with path context on I/O errors.
pub fn write_output(output: &Output, format: Format, path: &Path) -> Result<()> {
    let text = render(output, format)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Strip characters that would break the line-oriented CSV structure.
fn csv_safe(value: &str) -> String {
    value
        .chars()
        .map(|c| match c {
            ',' => ';',
            '\n' | '\r' => ' ',
            c => c,
        })
        .collect()
}

/// The config echo as `# `-prefixed comment lines of TOML.
fn config_comment(config: &ExperimentConfig) -> String {
    let toml = toml::to_string(config).unwrap_or_else(|e| format!("unserializable: {e}"));
    let mut out = String::from("# config\n");
    for line in toml.lines() {
        let _ = writeln!(out, "# {line}");
    }
    out
}

fn opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Per-repetition column names, in emission order.
pub const REP_COLUMNS: &[&str] = &[
    "rep",
    "p_hat",
    "n_samples",
    "excluded_samples",
    "max_weight",
    "ess",
    "k_components",
    "final_clusters",
    "em_iterations",
    "em_converged",
    "gradient_rounds",
    "total_steps",
    "truncated",
    "lsf_calls",
    "gradient_calls",
    "fd_calls",
    "total_calls",
    "equivalent_calls",
];

fn rep_row(r: &RepRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.rep,
        r.p_hat,
        r.n_samples,
        r.excluded_samples,
        r.max_weight,
        r.ess,
        r.k_components,
        r.final_clusters,
        r.em_iterations,
        r.em_converged,
        r.gradient_rounds,
        r.total_steps,
        r.truncated,
        r.lsf_calls,
        r.gradient_calls,
        r.fd_calls,
        r.total_calls,
        r.equivalent_calls,
    )
}

fn run_csv(run: &RunOutput) -> String {
    let mut out = config_comment(&run.config);
    out.push_str(&REP_COLUMNS.join(","));
    out.push('\n');
    for record in &run.result.records {
        out.push_str(&rep_row(record));
        out.push('\n');
    }
    out.push('\n');
    out.push_str("# summary\n");
    let resolved_smoothing = run.config.smoothing.resolve();
    let mut kv = |key: &str, value: String| {
        let _ = writeln!(out, "{key},{}", csv_safe(&value));
    };
    if let Some(s) = &run.result.summary {
        kv("reps", s.reps.to_string());
        kv("failed_reps", s.failed_reps.to_string());
        kv("p_ref", opt(s.p_ref));
        kv("nrmse", opt(s.nrmse));
        kv("mean_estimate", s.mean_estimate.to_string());
        kv("mean_lsf_calls", s.mean_lsf_calls.to_string());
        kv("mean_gradient_calls", s.mean_gradient_calls.to_string());
        kv("mean_fd_calls", s.mean_fd_calls.to_string());
        kv("mean_total_calls", s.mean_total_calls.to_string());
        kv("mean_equivalent_calls", s.mean_equivalent_calls.to_string());
        kv("mean_gradient_rounds", s.mean_gradient_rounds.to_string());
        kv("mean_k_components", s.mean_k_components.to_string());
    } else {
        kv("reps", run.result.records.len().to_string());
        kv("failed_reps", run.result.failed.len().to_string());
    }
    if let Ok(sm) = resolved_smoothing {
        kv("sigma", sm.sigma().to_string());
        kv("mu", sm.mu().to_string());
    }
    kv("seed", run.config.seed.to_string());
    if !run.result.failed.is_empty() {
        let indices: Vec<String> = run
            .result
            .failed
            .iter()
            .map(|f| f.rep.to_string())
            .collect();
        kv("failed_indices", indices.join(";"));
    }
    if let Some(reason) = &run.result.invalid {
        kv("invalid", reason.clone());
    }
    out
}

/// Sweep column names, in emission order.
pub const SWEEP_COLUMNS: &[&str] = &[
    "sigma_r",
    "reps",
    "failed_reps",
    "nrmse",
    "mean_estimate",
    "mean_gradient_rounds",
    "mean_gradient_evals",
    "mean_equivalent_calls",
    "error",
];

fn sweep_csv(sweep: &SweepOutput) -> String {
    let mut out = config_comment(&sweep.config);
    out.push_str(&SWEEP_COLUMNS.join(","));
    out.push('\n');
    for row in &sweep.result.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            row.sigma_r,
            row.reps,
            row.failed_reps,
            opt(row.nrmse),
            opt(row.mean_estimate),
            opt(row.mean_gradient_rounds),
            opt(row.mean_gradient_evals),
            opt(row.mean_equivalent_calls),
            row.error.as_deref().map(csv_safe).unwrap_or_default(),
        );
    }
    out
}

fn parse_field<T: std::str::FromStr>(field: &str, name: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    field
        .parse()
        .map_err(|e| anyhow::anyhow!("CSV field {name} = {field:?}: {e}"))
}

/// Parse the per-repetition rows and summary block back out of a run CSV.
///
/// Inverse of the CSV emitter for every finite field; used by the
/// round-trip and golden-file tests.
pub fn parse_run_csv(text: &str) -> Result<(Vec<RepRecord>, Vec<(String, String)>)> {
    let mut lines = text.lines().peekable();
    // Skip the config comment.
    while lines.peek().is_some_and(|l| l.starts_with('#') ) {
        lines.next();
    }
    let header = lines.next().context("CSV has no header")?;
    if header != REP_COLUMNS.join(",") {
        bail!("unexpected CSV header: {header}");
    }
    let mut records = Vec::new();
    for line in lines.by_ref() {
        if line.is_empty() {
            break;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != REP_COLUMNS.len() {
            bail!("CSV row has {} fields, expected {}", f.len(), REP_COLUMNS.len());
        }
        records.push(RepRecord {
            rep: parse_field(f[0], "rep")?,
            p_hat: parse_field(f[1], "p_hat")?,
            n_samples: parse_field(f[2], "n_samples")?,
            excluded_samples: parse_field(f[3], "excluded_samples")?,
            max_weight: parse_field(f[4], "max_weight")?,
            ess: parse_field(f[5], "ess")?,
            k_components: parse_field(f[6], "k_components")?,
            final_clusters: parse_field(f[7], "final_clusters")?,
            em_iterations: parse_field(f[8], "em_iterations")?,
            em_converged: parse_field(f[9], "em_converged")?,
            gradient_rounds: parse_field(f[10], "gradient_rounds")?,
            total_steps: parse_field(f[11], "total_steps")?,
            truncated: parse_field(f[12], "truncated")?,
            lsf_calls: parse_field(f[13], "lsf_calls")?,
            gradient_calls: parse_field(f[14], "gradient_calls")?,
            fd_calls: parse_field(f[15], "fd_calls")?,
            total_calls: parse_field(f[16], "total_calls")?,
            equivalent_calls: parse_field(f[17], "equivalent_calls")?,
        });
    }
    let mut summary = Vec::new();
    for line in lines {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(',')
            .with_context(|| format!("summary line without comma: {line}"))?;
        summary.push((key.to_owned(), value.to_owned()));
    }
    Ok((records, summary))
}

/// One-paragraph human-readable report for stdout.
pub fn human_summary(output: &Output) -> String {
    match output {
        Output::Run(run) => {
            let mut out = format!(
                "benchmark {} | {} repetitions, {} failed\n",
                run.config.benchmark,
                run.result.records.len(),
                run.result.failed.len()
            );
            if let Some(s) = &run.result.summary {
                let _ = write!(out, "mean estimate {:.6e}", s.mean_estimate);
                if let (Some(p), Some(e)) = (s.p_ref, s.nrmse) {
                    let _ = write!(out, " | reference {p:.6e} | nRMSE {e:.4}");
                }
                let _ = write!(
                    out,
                    "\nmean calls per repetition: lsf {:.1}, gradient {:.1}, fd {:.1}, equivalent {:.1}",
                    s.mean_lsf_calls,
                    s.mean_gradient_calls + s.mean_fd_calls / run.config.dimension as f64,
                    s.mean_fd_calls,
                    s.mean_equivalent_calls
                );
            }
            if let Some(reason) = &run.result.invalid {
                let _ = write!(out, "\nINVALID: {reason}");
            }
            out
        }
        Output::Sweep(sweep) => {
            let mut out = format!(
                "benchmark {} | smoothing sweep, {} points\n",
                sweep.config.benchmark,
                sweep.result.rows.len()
            );
            for row in &sweep.result.rows {
                let _ = write!(out, "sigma_r {:>10.3e}: ", row.sigma_r);
                match (row.nrmse, &row.error) {
                    (Some(e), _) => {
                        let _ = write!(out, "nRMSE {e:.4}");
                        if let Some(g) = row.mean_gradient_evals {
                            let _ = write!(out, ", mean gradient evals {g:.1}");
                        }
                    }
                    (None, Some(err)) => {
                        let _ = write!(out, "failed: {err}");
                    }
                    (None, None) => {
                        let _ = write!(out, "no reference value");
                    }
                }
                out.push('\n');
            }
            out.pop();
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_config;
    use crate::run::{run_experiment, run_sigma_sweep, RunSummary, SweepRow};

    fn toy_output() -> RunOutput {
        let cfg = load_config(
            "benchmark = \"linear\"\n",
            &[
                "dimension=10".to_owned(),
                "particles=20".to_owned(),
                "is_samples=100".to_owned(),
                "repetitions=2".to_owned(),
                "seed=42".to_owned(),
                "sampler.k_min=5".to_owned(),
                "sampler.k_max=200".to_owned(),
                "benchmark_params.linear_threshold=2.5".to_owned(),
            ],
        )
        .unwrap();
        let res = cfg.resolve().unwrap();
        let result = run_experiment(&cfg, &res);
        RunOutput {
            config: cfg,
            result,
        }
    }

    #[test]
    fn run_csv_round_trips_records_at_full_precision() {
        let output = toy_output();
        let text = render(&Output::Run(output.clone()), Format::Csv).unwrap();
        let (records, summary) = parse_run_csv(&text).unwrap();
        assert_eq!(records, output.result.records);
        let s = output.result.summary.as_ref().unwrap();
        let lookup = |k: &str| {
            summary
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
                .unwrap()
        };
        assert_eq!(lookup("nrmse").parse::<f64>().unwrap(), s.nrmse.unwrap());
        assert_eq!(
            lookup("mean_estimate").parse::<f64>().unwrap(),
            s.mean_estimate
        );
        assert_eq!(lookup("seed"), "42");
    }

    #[test]
    fn json_round_trips_by_construction() {
        let output = Output::Run(toy_output());
        let text = render(&output, Format::Json).unwrap();
        let back: Output = serde_json::from_str(&text).unwrap();
        assert_eq!(back, output);
    }

    #[test]
    fn empty_run_yields_header_only_csv_and_valid_json() {
        let mut output = toy_output();
        output.result.records.clear();
        output.result.summary = Some(RunSummary {
            reps: 0,
            failed_reps: 0,
            p_ref: None,
            nrmse: None,
            mean_estimate: 0.0,
            mean_lsf_calls: 0.0,
            mean_gradient_calls: 0.0,
            mean_fd_calls: 0.0,
            mean_total_calls: 0.0,
            mean_equivalent_calls: 0.0,
            mean_gradient_rounds: 0.0,
            mean_k_components: 0.0,
        });
        let text = render(&Output::Run(output.clone()), Format::Csv).unwrap();
        let (records, _) = parse_run_csv(&text).unwrap();
        assert!(records.is_empty());
        assert!(text.contains(&REP_COLUMNS.join(",")));
        let json = render(&Output::Run(output), Format::Json).unwrap();
        let back: Output = serde_json::from_str(&json).unwrap();
        match back {
            Output::Run(run) => assert!(run.result.records.is_empty()),
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn sweep_csv_has_one_line_per_point_and_sanitized_errors() {
        let cfg = load_config(
            "benchmark = \"linear\"\n",
            &[
                "dimension=10".to_owned(),
                "particles=20".to_owned(),
                "is_samples=50".to_owned(),
                "repetitions=1".to_owned(),
                "sampler.k_min=5".to_owned(),
                "sampler.k_max=200".to_owned(),
                "benchmark_params.linear_threshold=2.0".to_owned(),
            ],
        )
        .unwrap();
        let sweep = run_sigma_sweep(&cfg, &[0.1]).unwrap();
        let mut output = SweepOutput {
            config: cfg,
            result: sweep,
        };
        output.result.rows.push(SweepRow {
            sigma_r: 2e-2,
            reps: 0,
            failed_reps: 1,
            nrmse: None,
            mean_estimate: None,
            mean_gradient_rounds: None,
            mean_gradient_evals: None,
            mean_equivalent_calls: None,
            error: Some("bad, very bad\nindeed".to_owned()),
        });
        let text = render(&Output::Sweep(output), Format::Csv).unwrap();
        let data_lines: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.is_empty())
            .collect();
        // Header plus two rows.
        assert_eq!(data_lines.len(), 3);
        assert!(data_lines[2].contains("bad; very bad indeed"));
        // Every data line still has the declared column count.
        for line in &data_lines {
            assert_eq!(line.split(',').count(), SWEEP_COLUMNS.len());
        }
    }
}
