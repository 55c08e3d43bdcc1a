//! Experiment execution: one repetition of the full pipeline, repeated runs
//! with repetition-level parallelism, and smoothing-parameter sweeps.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use aldi_is::clustering::dbscan;
use aldi_is::estimator::{is_estimate, nrmse};
use aldi_is::lsf::{CallLedger, Evaluator, LedgerSnapshot};
use aldi_is::rng::{ChaCha12Rng, RepStreams, Stage};
use aldi_is::sampler::{run_schedule, run_ula, Ensemble, RunDiagnostics};
use aldi_is::vmfnm::{self, fit_em, select_k, VmfnmModel};
use aldi_is::{Error, Result};

use crate::config::{ExperimentConfig, KPolicy, Resolved, SamplerMode, SmoothingSpec};

/// Fraction of repetitions that may fail before the whole experiment is
/// declared invalid.
pub const MAX_FAILED_FRACTION: f64 = 0.02;

/// Everything recorded about one successful repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    /// Repetition index (also the RNG stream index).
    pub rep: u64,
    /// Importance-sampling estimate of the failure probability.
    pub p_hat: f64,
    /// Importance samples drawn.
    pub n_samples: usize,
    /// Samples excluded for non-finite values.
    pub excluded_samples: usize,
    /// Largest importance weight.
    pub max_weight: f64,
    /// Effective sample size of the weights.
    pub ess: f64,
    /// Mixture components fitted.
    pub k_components: usize,
    /// Cluster count of the final ensemble (drives the `auto` policy).
    pub final_clusters: usize,
    /// EM iterations used.
    pub em_iterations: usize,
    /// Whether EM met its tolerance within the iteration cap.
    pub em_converged: bool,
    /// Gradient rounds across all schedule levels.
    pub gradient_rounds: usize,
    /// Accepted dynamics steps across all schedule levels.
    pub total_steps: usize,
    /// Whether any level hit its iteration cap instead of stopping.
    pub truncated: bool,
    /// Limit-state executions (finite-difference stencils included).
    pub lsf_calls: u64,
    /// Analytic gradient evaluations.
    pub gradient_calls: u64,
    /// Finite-difference coordinate pairs.
    pub fd_calls: u64,
    /// `lsf_calls + 2 * fd_calls` (the ledger's conservative figure).
    pub total_calls: u64,
    /// Plain value executions plus two per gradient evaluation — the cost
    /// convention of the reference tables.
    pub equivalent_calls: u64,
}

/// A repetition that returned an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRep {
    /// Repetition index.
    pub rep: u64,
    /// Error message.
    pub error: String,
}

/// Aggregate over the successful repetitions of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Successful repetitions.
    pub reps: usize,
    /// Failed repetitions.
    pub failed_reps: usize,
    /// Reference probability, when known.
    pub p_ref: Option<f64>,
    /// Normalised RMSE against `p_ref`, when known.
    pub nrmse: Option<f64>,
    /// Mean estimate across repetitions.
    pub mean_estimate: f64,
    /// Mean limit-state executions per repetition.
    pub mean_lsf_calls: f64,
    /// Mean analytic gradient evaluations per repetition.
    pub mean_gradient_calls: f64,
    /// Mean finite-difference pairs per repetition.
    pub mean_fd_calls: f64,
    /// Mean of the ledger's conservative total.
    pub mean_total_calls: f64,
    /// Mean of the two-per-gradient-convention total.
    pub mean_equivalent_calls: f64,
    /// Mean dynamics gradient rounds per repetition.
    pub mean_gradient_rounds: f64,
    /// Mean fitted component count.
    pub mean_k_components: f64,
}

/// Result of a repeated experiment. `summary` is absent exactly when the
/// failed-repetition budget was exceeded; `invalid` then explains why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Per-repetition records, in repetition order.
    pub records: Vec<RepRecord>,
    /// Failed repetitions, in repetition order.
    pub failed: Vec<FailedRep>,
    /// Aggregate statistics (absent when invalid).
    pub summary: Option<RunSummary>,
    /// Reason the experiment is invalid, if it is.
    pub invalid: Option<String>,
}

/// Gradient evaluations recorded by a ledger snapshot, counting one per
/// analytic evaluation and one per completed finite-difference stencil.
fn gradient_evals(calls: &LedgerSnapshot, d: usize) -> u64 {
    calls.gradient_calls + calls.fd_calls / d as u64
}

/// Total cost under the convention that one gradient evaluation costs two
/// plain executions: value calls plus `2 *` gradient evaluations.
fn equivalent_calls(calls: &LedgerSnapshot, d: usize) -> u64 {
    let value_calls = calls.lsf_calls - 2 * calls.fd_calls;
    value_calls + 2 * gradient_evals(calls, d)
}

/// Run the dynamics over the whole schedule in the configured mode.
fn run_dynamics(
    ensemble: Ensemble,
    evaluator: &Evaluator<'_>,
    res: &Resolved,
    rng: &mut ChaCha12Rng,
) -> Result<(Ensemble, RunDiagnostics)> {
    match res.mode {
        SamplerMode::Aldi => run_schedule(
            ensemble,
            evaluator,
            &res.smoothing,
            &res.schedule,
            &res.aldi,
            rng,
        ),
        SamplerMode::Ula => {
            // Fixed-step, fixed-horizon dynamics per level over the same
            // schedule; diagnostics are concatenated across levels.
            let before = evaluator.ledger().snapshot();
            let mut current = ensemble;
            let mut levels = Vec::with_capacity(res.schedule.len());
            for &q in &res.schedule.levels {
                let level_smoothing = res.smoothing.at_level(q)?;
                let (next, diag) =
                    run_ula(current, evaluator, &level_smoothing, &res.ula, rng)?;
                levels.extend(diag.levels);
                current = next;
            }
            let after = evaluator.ledger().snapshot();
            let calls = LedgerSnapshot {
                lsf_calls: after.lsf_calls - before.lsf_calls,
                gradient_calls: after.gradient_calls - before.gradient_calls,
                fd_calls: after.fd_calls - before.fd_calls,
            };
            Ok((current, RunDiagnostics { levels, calls }))
        }
    }
}

/// Fit the mixture according to the component-count policy.
fn fit_mixture(
    particles: &DMatrix<f64>,
    final_clusters: usize,
    res: &Resolved,
    m: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(VmfnmModel, aldi_is::vmfnm::EmReport)> {
    match &res.k_policy {
        KPolicy::Auto { max } => {
            let k = final_clusters.clamp(1, *max).min(m);
            fit_em(particles, k, res.em_max_iter, res.em_tol, rng)
        }
        KPolicy::Fixed(k) => fit_em(particles, *k, res.em_max_iter, res.em_tol, rng),
        KPolicy::Bic(candidates) => {
            let selection = select_k(particles, candidates, res.em_max_iter, res.em_tol, rng)?;
            Ok((selection.model, selection.report))
        }
    }
}

/// Execute one repetition of the pipeline: standard-normal initialisation,
/// dynamics over the schedule, mixture fit, importance-sampling estimate.
pub fn run_repetition(cfg: &ExperimentConfig, res: &Resolved, rep: u64) -> Result<RepRecord> {
    let streams = RepStreams::new(cfg.seed, rep);
    let ledger = CallLedger::default();
    let evaluator = Evaluator::auto(res.lsf.as_ref(), &ledger);

    let mut rng = streams.stage(Stage::Init);
    let ensemble = Ensemble::standard_normal(cfg.dimension, cfg.particles, &mut rng)?;

    let mut rng = streams.stage(Stage::Dynamics);
    let (ensemble, diagnostics) = run_dynamics(ensemble, &evaluator, res, &mut rng)?;

    let mut rng = streams.stage(Stage::Fit);
    let assignment = dbscan(
        &ensemble.particles,
        res.dbscan.epsilon,
        res.dbscan.min_neighbors,
    );
    let final_clusters = assignment.n_clusters();
    let (model, em_report) = fit_mixture(
        &ensemble.particles,
        final_clusters,
        res,
        cfg.particles,
        &mut rng,
    )?;

    let mut rng = streams.stage(Stage::Estimate);
    let samples = vmfnm::sample(&model, cfg.is_samples, &mut rng)?;
    let estimate = is_estimate(&samples, |x| vmfnm::log_pdf(x, &model), &evaluator)?;

    let calls = ledger.snapshot();
    Ok(RepRecord {
        rep,
        p_hat: estimate.p_hat,
        n_samples: estimate.n_samples,
        excluded_samples: estimate.excluded_samples,
        max_weight: estimate.weight_stats.max,
        ess: estimate.weight_stats.effective_sample_size,
        k_components: model.n_components(),
        final_clusters,
        em_iterations: em_report.iterations,
        em_converged: em_report.converged,
        gradient_rounds: diagnostics.total_gradient_rounds(),
        total_steps: diagnostics.total_steps(),
        truncated: diagnostics.truncated(),
        lsf_calls: calls.lsf_calls,
        gradient_calls: calls.gradient_calls,
        fd_calls: calls.fd_calls,
        total_calls: calls.total_calls(),
        equivalent_calls: equivalent_calls(&calls, cfg.dimension),
    })
}

fn mean_by(records: &[RepRecord], f: impl Fn(&RepRecord) -> f64) -> f64 {
    records.iter().map(f).sum::<f64>() / records.len() as f64
}

/// Aggregate successful repetitions, enforcing the failed-repetition budget.
fn summarize(
    records: &[RepRecord],
    failed: &[FailedRep],
    total_reps: usize,
    p_ref: Option<f64>,
) -> std::result::Result<RunSummary, String> {
    if failed.len() as f64 >= MAX_FAILED_FRACTION * total_reps as f64 {
        return Err(format!(
            "{} of {} repetitions failed; the budget is under {:.0}%",
            failed.len(),
            total_reps,
            MAX_FAILED_FRACTION * 100.0
        ));
    }
    let estimates: Vec<f64> = records.iter().map(|r| r.p_hat).collect();
    Ok(RunSummary {
        reps: records.len(),
        failed_reps: failed.len(),
        p_ref,
        nrmse: p_ref.map(|p| nrmse(&estimates, p)),
        mean_estimate: mean_by(records, |r| r.p_hat),
        mean_lsf_calls: mean_by(records, |r| r.lsf_calls as f64),
        mean_gradient_calls: mean_by(records, |r| r.gradient_calls as f64),
        mean_fd_calls: mean_by(records, |r| r.fd_calls as f64),
        mean_total_calls: mean_by(records, |r| r.total_calls as f64),
        mean_equivalent_calls: mean_by(records, |r| r.equivalent_calls as f64),
        mean_gradient_rounds: mean_by(records, |r| r.gradient_rounds as f64),
        mean_k_components: mean_by(records, |r| r.k_components as f64),
    })
}

/// Run all repetitions (in parallel across repetitions when the ambient
/// rayon pool has threads) and aggregate.
///
/// Repetition RNG streams depend only on `(seed, rep)`, and the reduction
/// is ordered, so results do not depend on the thread count.
pub fn run_experiment(cfg: &ExperimentConfig, res: &Resolved) -> RunResult {
    let outcomes: Vec<(u64, Result<RepRecord>)> = (0..cfg.repetitions as u64)
        .into_par_iter()
        .map(|rep| (rep, run_repetition(cfg, res, rep)))
        .collect();
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failed = Vec::new();
    for (rep, outcome) in outcomes {
        match outcome {
            Ok(record) => records.push(record),
            Err(e) => failed.push(FailedRep {
                rep,
                error: e.to_string(),
            }),
        }
    }
    let (summary, invalid) = match summarize(&records, &failed, cfg.repetitions, res.p_ref) {
        Ok(s) => (Some(s), None),
        Err(reason) => (None, Some(reason)),
    };
    RunResult {
        records,
        failed,
        summary,
        invalid,
    }
}

/// One grid point of a smoothing-parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Reduced smoothing parameter of this point.
    pub sigma_r: f64,
    /// Successful repetitions.
    pub reps: usize,
    /// Failed repetitions.
    pub failed_reps: usize,
    /// Normalised RMSE against the reference, when known and valid.
    pub nrmse: Option<f64>,
    /// Mean estimate, when valid.
    pub mean_estimate: Option<f64>,
    /// Mean dynamics gradient rounds, when valid.
    pub mean_gradient_rounds: Option<f64>,
    /// Mean gradient evaluations (analytic or finite-difference stencils),
    /// when valid.
    pub mean_gradient_evals: Option<f64>,
    /// Mean two-per-gradient-convention total, when valid.
    pub mean_equivalent_calls: Option<f64>,
    /// Why this point produced no statistics, if it did not.
    pub error: Option<String>,
}

/// Full sweep output: the base config ran once per grid point with only the
/// smoothing parameter changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// One row per grid point, in grid order.
    pub rows: Vec<SweepRow>,
}

/// Run the configured pipeline once per smoothing parameter in `grid`.
///
/// Grid points run sequentially (repetitions within each point run in
/// parallel); a failed point is recorded in its row and does not abort the
/// sweep.
pub fn run_sigma_sweep(cfg: &ExperimentConfig, grid: &[f64]) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &sigma_r in grid {
        let mut point_cfg = cfg.clone();
        point_cfg.smoothing = SmoothingSpec {
            sigma_r: Some(sigma_r),
            sigma: None,
            mu: None,
        };
        point_cfg.sweep = None;
        let row = match point_cfg.resolve() {
            Ok(point_res) => {
                let result = run_experiment(&point_cfg, &point_res);
                let d = point_cfg.dimension as f64;
                match (result.summary, result.invalid) {
                    (Some(s), _) => SweepRow {
                        sigma_r,
                        reps: s.reps,
                        failed_reps: s.failed_reps,
                        nrmse: s.nrmse,
                        mean_estimate: Some(s.mean_estimate),
                        mean_gradient_rounds: Some(s.mean_gradient_rounds),
                        mean_gradient_evals: Some(s.mean_gradient_calls + s.mean_fd_calls / d),
                        mean_equivalent_calls: Some(s.mean_equivalent_calls),
                        error: None,
                    },
                    (None, reason) => SweepRow {
                        sigma_r,
                        reps: result.records.len(),
                        failed_reps: result.failed.len(),
                        nrmse: None,
                        mean_estimate: None,
                        mean_gradient_rounds: None,
                        mean_gradient_evals: None,
                        mean_equivalent_calls: None,
                        error: Some(reason.unwrap_or_else(|| "invalid".to_owned())),
                    },
                }
            }
            Err(e) => SweepRow {
                sigma_r,
                reps: 0,
                failed_reps: 0,
                nrmse: None,
                mean_estimate: None,
                mean_gradient_rounds: None,
                mean_gradient_evals: None,
                mean_equivalent_calls: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    Ok(SweepResult { rows })
}
