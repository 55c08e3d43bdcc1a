//! Experiment configuration: TOML schema, CLI overrides, and resolution
//! into the core types.
//!
//! A config file is a single TOML document; every key has a documented
//! default except `benchmark`. `--set key=value` overrides use dotted paths
//! into the same schema (e.g. `--set sampler.k_min=30`,
//! `--set schedule.eps_cumus=[0.1,0.1,0.1,0.05]`).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use aldi_is::clustering::DbscanConfig;
use aldi_is::lsf::{create, Lsf, RegistryConfig};
use aldi_is::lsf::DarcyConfig;
use aldi_is::sampler::{AldiConfig, LevelSchedule, StepSize, UlaConfig};
use aldi_is::smoothing::SmoothingConfig;
use aldi_is::{Error, Result};

/// Full experiment description, as read from a TOML file or preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Benchmark id: `linear`, `four-branches`, or `darcy`.
    pub benchmark: String,
    /// Input dimension `d`.
    #[serde(default = "defaults::dimension")]
    pub dimension: usize,
    /// Ensemble size `M`.
    #[serde(default = "defaults::particles")]
    pub particles: usize,
    /// Importance-sampling size `N`.
    #[serde(default = "defaults::is_samples")]
    pub is_samples: usize,
    /// Independent repetitions of the whole pipeline.
    #[serde(default = "defaults::repetitions")]
    pub repetitions: usize,
    /// Master seed; repetition `r` uses the derived stream `(seed, r)`.
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    /// Reference probability for error statistics. Defaults to the exact
    /// normal tail for the linear benchmark and is required for nRMSE
    /// reporting on the others.
    #[serde(default)]
    pub p_ref: Option<f64>,
    /// Output file path (overridden by `--out`).
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub smoothing: SmoothingSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub dbscan: DbscanSpec,
    #[serde(default)]
    pub fit: FitSpec,
    #[serde(default)]
    pub benchmark_params: BenchmarkParams,
    /// Present only for smoothing-parameter sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

mod defaults {
    pub fn dimension() -> usize {
        100
    }
    pub fn particles() -> usize {
        50
    }
    pub fn is_samples() -> usize {
        2000
    }
    pub fn repetitions() -> usize {
        100
    }
    pub fn seed() -> u64 {
        2024
    }
    pub fn mode() -> String {
        "aldi".to_owned()
    }
    pub fn k_min() -> usize {
        10
    }
    pub fn k_max() -> usize {
        2000
    }
    pub fn step_scale() -> f64 {
        0.1
    }
    pub fn ula_step() -> f64 {
        1e-3
    }
    pub fn ula_steps() -> usize {
        100
    }
    pub fn k_policy() -> String {
        "auto".to_owned()
    }
    pub fn max_components() -> usize {
        5
    }
    pub fn k_candidates() -> Vec<usize> {
        vec![1, 2, 3, 4, 5]
    }
    pub fn em_max_iter() -> usize {
        500
    }
    pub fn em_tol() -> f64 {
        1e-6
    }
}

/// Indicator smoothing: either the reduced parameter `sigma_r` or an
/// explicit `(sigma, mu)` pair. Defaults to `sigma_r = 1e-3` when empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

impl SmoothingSpec {
    /// Default reduced smoothing parameter when nothing is configured.
    pub const DEFAULT_SIGMA_R: f64 = 1e-3;

    /// Resolve to a [`SmoothingConfig`].
    pub fn resolve(&self) -> Result<SmoothingConfig> {
        match (self.sigma_r, self.sigma, self.mu) {
            (None, None, None) => SmoothingConfig::from_sigma_r(Self::DEFAULT_SIGMA_R),
            (Some(sr), None, None) => SmoothingConfig::from_sigma_r(sr),
            (None, Some(s), Some(m)) => SmoothingConfig::new(s, m),
            _ => Err(Error::InvalidConfig(
                "smoothing takes either sigma_r or the pair (sigma, mu), not a mix".into(),
            )),
        }
    }

    /// The reduced parameter actually in effect, when one is.
    pub fn effective_sigma_r(&self) -> Option<f64> {
        match (self.sigma_r, self.sigma) {
            (Some(sr), _) => Some(sr),
            (None, None) => Some(Self::DEFAULT_SIGMA_R),
            _ => None,
        }
    }
}

/// Tempering schedule: level shifts with per-level regularisation and
/// stopping tolerance. Each field defaults to the standard four-level
/// schedule, so partial `[schedule]` tables override one array at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "schedule_defaults::levels")]
    pub levels: Vec<f64>,
    #[serde(default = "schedule_defaults::gammas")]
    pub gammas: Vec<f64>,
    #[serde(default = "schedule_defaults::eps_cumus")]
    pub eps_cumus: Vec<f64>,
}

mod schedule_defaults {
    use aldi_is::sampler::LevelSchedule;

    pub fn levels() -> Vec<f64> {
        LevelSchedule::standard(0.01).levels
    }
    pub fn gammas() -> Vec<f64> {
        LevelSchedule::standard(0.01).gammas
    }
    pub fn eps_cumus() -> Vec<f64> {
        LevelSchedule::standard(0.01).eps_cumus
    }
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            levels: schedule_defaults::levels(),
            gammas: schedule_defaults::gammas(),
            eps_cumus: schedule_defaults::eps_cumus(),
        }
    }
}

impl ScheduleSpec {
    /// Resolve to a validated [`LevelSchedule`].
    pub fn resolve(&self) -> Result<LevelSchedule> {
        let schedule = LevelSchedule {
            levels: self.levels.clone(),
            gammas: self.gammas.clone(),
            eps_cumus: self.eps_cumus.clone(),
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

/// Dynamics flavor and tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    /// `aldi` (interacting, adaptive step, stopping rule) or `ula`
    /// (independent particles, fixed step, fixed horizon per level).
    #[serde(default = "defaults::mode")]
    pub mode: String,
    /// Minimum iterations per level before the stopping rule may fire.
    #[serde(default = "defaults::k_min")]
    pub k_min: usize,
    /// Iteration cap per level.
    #[serde(default = "defaults::k_max")]
    pub k_max: usize,
    /// Numerator of the adaptive step size.
    #[serde(default = "defaults::step_scale")]
    pub step_scale: f64,
    /// Fixed time step for `ula` mode.
    #[serde(default = "defaults::ula_step")]
    pub ula_step: f64,
    /// Steps per schedule level for `ula` mode.
    #[serde(default = "defaults::ula_steps")]
    pub ula_steps: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            mode: defaults::mode(),
            k_min: defaults::k_min(),
            k_max: defaults::k_max(),
            step_scale: defaults::step_scale(),
            ula_step: defaults::ula_step(),
            ula_steps: defaults::ula_steps(),
        }
    }
}

/// Which dynamics the pipeline runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerMode {
    /// Interacting Langevin with adaptive step and stopping rule.
    Aldi,
    /// Plain unadjusted Langevin with fixed step and deterministic horizon.
    Ula,
}

/// Density-based gradient sharing. The same parameters feed the automatic
/// component-count choice for the mixture fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbscanSpec {
    /// Share gradients within clusters during the dynamics.
    #[serde(default)]
    pub enabled: bool,
    /// Neighbourhood radius; default `d / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Core-point neighbour count (self included); default 5, lowered to
    /// `max(2, M/10)` for ensembles under 50 particles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_neighbors: Option<usize>,
    /// Gradient rounds before clustering first applies; default 10.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    /// Rounds between re-clusterings; default 10.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
}

impl DbscanSpec {
    /// Resolve to a validated [`DbscanConfig`] for a `d`-dimensional
    /// ensemble of `m` particles.
    pub fn resolve(&self, d: usize, m: usize) -> Result<DbscanConfig> {
        let base = DbscanConfig::for_problem(d, m);
        let cfg = DbscanConfig {
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            min_neighbors: self.min_neighbors.unwrap_or(base.min_neighbors),
            burn_in: self.burn_in.unwrap_or(base.burn_in),
            period: self.period.unwrap_or(base.period),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Mixture-fit policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    /// `auto` (component count = cluster count of the final ensemble,
    /// clamped to `[1, max_components]`), `fixed` (uses `k`), or `bic`
    /// (smallest-BIC choice among `k_candidates`).
    #[serde(default = "defaults::k_policy")]
    pub k_policy: String,
    /// Component count for the `fixed` policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Candidate counts for the `bic` policy.
    #[serde(default = "defaults::k_candidates")]
    pub k_candidates: Vec<usize>,
    /// Upper clamp of the `auto` policy.
    #[serde(default = "defaults::max_components")]
    pub max_components: usize,
    /// EM iteration cap.
    #[serde(default = "defaults::em_max_iter")]
    pub max_iter: usize,
    /// EM relative log-likelihood tolerance.
    #[serde(default = "defaults::em_tol")]
    pub tol: f64,
}

impl Default for FitSpec {
    fn default() -> Self {
        Self {
            k_policy: defaults::k_policy(),
            k: None,
            k_candidates: defaults::k_candidates(),
            max_components: defaults::max_components(),
            max_iter: defaults::em_max_iter(),
            tol: defaults::em_tol(),
        }
    }
}

/// Resolved component-count policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KPolicy {
    /// Cluster count of the final ensemble, clamped to `[1, max]`.
    Auto {
        /// Upper clamp.
        max: usize,
    },
    /// Fixed component count.
    Fixed(usize),
    /// Smallest-BIC choice among the candidates.
    Bic(Vec<usize>),
}

impl FitSpec {
    /// Resolve the policy string.
    pub fn resolve_policy(&self) -> Result<KPolicy> {
        match self.k_policy.as_str() {
            "auto" => {
                if self.max_components == 0 {
                    return Err(Error::InvalidConfig(
                        "fit.max_components must be at least 1".into(),
                    ));
                }
                Ok(KPolicy::Auto {
                    max: self.max_components,
                })
            }
            "fixed" => {
                let k = self.k.ok_or_else(|| {
                    Error::InvalidConfig("fit.k_policy = \"fixed\" needs fit.k".into())
                })?;
                if k == 0 {
                    return Err(Error::InvalidConfig("fit.k must be at least 1".into()));
                }
                Ok(KPolicy::Fixed(k))
            }
            "bic" => {
                if self.k_candidates.is_empty() {
                    return Err(Error::InvalidConfig(
                        "fit.k_policy = \"bic\" needs non-empty fit.k_candidates".into(),
                    ));
                }
                Ok(KPolicy::Bic(self.k_candidates.clone()))
            }
            other => Err(Error::InvalidConfig(format!(
                "fit.k_policy must be auto, fixed, or bic, got {other:?}"
            ))),
        }
    }
}

/// Benchmark-specific knobs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkParams {
    /// Threshold `beta` of the linear benchmark; default 5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_threshold: Option<f64>,
    /// Mesh elements of the Darcy solver; default 500.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub darcy_segments: Option<usize>,
    /// Correlation length of the Darcy log-conductivity field; default 0.1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub darcy_corr_length: Option<f64>,
}

impl BenchmarkParams {
    /// Resolve to a [`RegistryConfig`] at dimension `d`.
    pub fn registry(&self, d: usize) -> RegistryConfig {
        let base = RegistryConfig::default();
        let darcy_base = DarcyConfig::default();
        RegistryConfig {
            d,
            linear_threshold: self.linear_threshold.unwrap_or(base.linear_threshold),
            darcy: DarcyConfig {
                d,
                segments: self.darcy_segments.unwrap_or(darcy_base.segments),
                corr_length: self.darcy_corr_length.unwrap_or(darcy_base.corr_length),
            },
        }
    }
}

/// Smoothing-parameter sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Reduced smoothing parameters to run, in order.
    pub sigma_r: Vec<f64>,
}

/// Everything [`run_experiment`](crate::run::run_experiment) needs, resolved
/// and validated once per experiment.
///
/// The limit state is shared across repetitions (immutable, thread-safe);
/// each repetition charges its own ledger.
pub struct Resolved {
    /// The benchmark limit state.
    pub lsf: Arc<dyn Lsf>,
    /// Base smoothing (level shift 0).
    pub smoothing: SmoothingConfig,
    /// Tempering schedule.
    pub schedule: LevelSchedule,
    /// Per-level dynamics tuning (gamma/eps_cumu overridden per level).
    pub aldi: AldiConfig,
    /// Which dynamics run.
    pub mode: SamplerMode,
    /// Fixed-step tuning for `ula` mode.
    pub ula: UlaConfig,
    /// Clustering parameters (gradient sharing and the `auto` K policy).
    pub dbscan: DbscanConfig,
    /// Component-count policy for the mixture fit.
    pub k_policy: KPolicy,
    /// EM iteration cap and tolerance.
    pub em_max_iter: usize,
    /// EM relative tolerance.
    pub em_tol: f64,
    /// Reference probability, when known.
    pub p_ref: Option<f64>,
}

impl ExperimentConfig {
    /// Validate the whole configuration and resolve it into core types.
    pub fn resolve(&self) -> Result<Resolved> {
        if self.particles == 0 {
            return Err(Error::InvalidConfig("particles must be at least 1".into()));
        }
        if self.is_samples == 0 {
            return Err(Error::InvalidConfig("is_samples must be at least 1".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig(
                "repetitions must be at least 1".into(),
            ));
        }
        let registry = self.benchmark_params.registry(self.dimension);
        let lsf = create(&self.benchmark, &registry)?;
        if lsf.dim() != self.dimension {
            return Err(Error::InvalidConfig(format!(
                "benchmark {:?} is {}-dimensional, config says dimension = {}",
                self.benchmark,
                lsf.dim(),
                self.dimension
            )));
        }
        let smoothing = self.smoothing.resolve()?;
        let schedule = self.schedule.resolve()?;
        let dbscan = self.dbscan.resolve(self.dimension, self.particles)?;
        let mode = match self.sampler.mode.as_str() {
            "aldi" => SamplerMode::Aldi,
            "ula" => SamplerMode::Ula,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "sampler.mode must be aldi or ula, got {other:?}"
                )))
            }
        };
        let aldi = AldiConfig {
            gamma: 1.0, // overridden per level by the schedule
            step_scale: self.sampler.step_scale,
            eps_cumu: 0.1, // overridden per level by the schedule
            k_min: self.sampler.k_min,
            k_max: self.sampler.k_max,
            dbscan: if self.dbscan.enabled {
                Some(dbscan)
            } else {
                None
            },
        };
        aldi.validate()?;
        let ula = UlaConfig {
            max_steps: self.sampler.ula_steps,
            step: StepSize::Fixed(self.sampler.ula_step),
            stopping: None,
        };
        if mode == SamplerMode::Ula {
            ula.validate()?;
            if self.sampler.ula_steps == 0 {
                return Err(Error::InvalidConfig(
                    "sampler.ula_steps must be at least 1".into(),
                ));
            }
        }
        let k_policy = self.fit.resolve_policy()?;
        if let KPolicy::Fixed(k) = k_policy {
            if k > self.particles {
                return Err(Error::InvalidConfig(format!(
                    "fit.k = {k} exceeds the particle count {}",
                    self.particles
                )));
            }
        }
        if self.fit.max_iter == 0 {
            return Err(Error::InvalidConfig("fit.max_iter must be at least 1".into()));
        }
        if !(self.fit.tol > 0.0) || !self.fit.tol.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "fit.tol must be positive and finite, got {}",
                self.fit.tol
            )));
        }
        let p_ref = match self.p_ref {
            Some(p) => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "p_ref must lie in (0, 1), got {p}"
                    )));
                }
                Some(p)
            }
            None if self.benchmark == "linear" => {
                Some(normal_tail(registry.linear_threshold))
            }
            None => None,
        };
        if let Some(sweep) = &self.sweep {
            if sweep.sigma_r.is_empty() {
                return Err(Error::InvalidConfig("sweep.sigma_r is empty".into()));
            }
            for &sr in &sweep.sigma_r {
                if !(sr > 0.0) || !sr.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "sweep.sigma_r entries must be positive and finite, got {sr}"
                    )));
                }
            }
        }
        Ok(Resolved {
            lsf,
            smoothing,
            schedule,
            aldi,
            mode,
            ula,
            dbscan,
            k_policy,
            em_max_iter: self.fit.max_iter,
            em_tol: self.fit.tol,
            p_ref,
        })
    }
}

/// `P(Z <= -beta)` for standard normal `Z`: the exact reference probability
/// of the linear benchmark.
pub fn normal_tail(beta: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(beta / std::f64::consts::SQRT_2)
}

/// Parse a TOML config, then apply `--set` overrides (dotted paths).
///
/// Parse and type errors from the file are line-precise; override errors
/// name the offending key.
pub fn load_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    // Surface syntax errors against the raw file first: the toml error
    // display carries line/column context.
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
    if overrides.is_empty() {
        // Deserialize straight from the text so type errors also carry
        // line/column positions.
        return toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config error: {e}")));
    }
    for item in overrides {
        apply_override(&mut table, item)?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::InvalidConfig(format!("config error after overrides: {e}")))
}

/// Apply one `key.path=value` override to a TOML table.
fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (path, raw) = item.split_once('=').ok_or_else(|| {
        Error::InvalidConfig(format!("override {item:?} is not of the form key=value"))
    })?;
    let path = path.trim();
    if path.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "override {item:?} has an empty key"
        )));
    }
    let value = parse_override_value(raw.trim());
    let mut node = table;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "override key {path:?} has an empty path segment"
            )));
        }
        if parts.peek().is_none() {
            node.insert(part.to_owned(), value);
            break;
        }
        let child = node
            .entry(part.to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = child.as_table_mut().ok_or_else(|| {
            Error::InvalidConfig(format!(
                "override key {path:?}: segment {part:?} is not a table"
            ))
        })?;
    }
    Ok(())
}

/// Interpret an override value as TOML (number, bool, array, ...), falling
/// back to a plain string.
fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed override table has key v"),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}
