//! Probability estimators and cross-repetition error statistics.
//!
//! The importance-sampling estimator of `p = P(g(Z) <= 0)` draws `N` samples
//! from an auxiliary density and averages the weighted failure indicator
//!
//! ```text
//! p_hat = (1/N) sum_i 1{g(x_i) <= 0} * exp(log rho(x_i) - log aux(x_i)),
//! ```
//!
//! with `rho` the standard-normal density. Weights are always formed in log
//! space, so the estimate stays correct when both densities underflow but
//! their ratio is moderate. Samples whose weight cannot be evaluated to a
//! finite number are flagged and excluded; more than 0.1% of them
//! invalidates the run.
//!
//! [`crude_mc`] is the plain Monte Carlo baseline, [`nrmse`] the normalized
//! root-mean-square error over repeated estimates, and
//! [`theory_diagnostics`] computes the terms of an a priori nRMSE bound for
//! sampling from the smoothed optimal density, together with the
//! log-concavity/log-smoothness constants of the rare-event potential when
//! the limit state's smoothness constants are known.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsf::{Evaluator, LedgerSnapshot};
use crate::smoothing::SmoothingConfig;

/// Summary statistics of the failure-indicator-weighted importance weights.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeightStats {
    /// Largest weight (zero when no sample fails).
    pub max: f64,
    /// Mean weight over the retained samples; equals the estimate itself.
    pub mean: f64,
    /// `(sum w)^2 / sum w^2`, at most the number of retained samples.
    pub effective_sample_size: f64,
}

/// One probability estimate with its weight diagnostics and call costs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    /// The probability estimate; always finite and non-negative in a valid
    /// run.
    pub p_hat: f64,
    /// Number of samples actually averaged (excluded samples not counted).
    pub n_samples: usize,
    /// Samples dropped because their weight was not a finite number.
    pub excluded_samples: usize,
    /// Weight diagnostics over the retained samples.
    pub weight_stats: WeightStats,
    /// Call-ledger snapshot at the time of the estimate.
    pub ledger: LedgerSnapshot,
}

/// Mean call counts per successful repetition.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CallMeans {
    /// Mean raw limit-state executions.
    pub lsf_calls: f64,
    /// Mean analytic gradient evaluations.
    pub gradient_calls: f64,
    /// Mean finite-difference coordinate pairs.
    pub fd_calls: f64,
    /// Mean combined cost (`lsf + 2 * fd`).
    pub total_calls: f64,
}

/// Aggregate of repeated estimates against a reference probability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    /// Successful repetitions aggregated here.
    pub reps: usize,
    /// Reference probability the error statistics are measured against.
    pub p_ref: f64,
    /// `sqrt(mean((p_hat - p_ref)^2)) / p_ref` over the successful reps.
    pub nrmse: f64,
    /// Mean of the estimates.
    pub mean_estimate: f64,
    /// Mean call counts per successful repetition.
    pub call_means: CallMeans,
    /// Repetitions that failed (e.g. diverged sampling) and were excluded.
    pub failure_count: usize,
}

/// Log-density of the standard normal distribution on `R^d`.
pub fn log_standard_normal(x: &DVector<f64>) -> f64 {
    -0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * x.norm_squared()
}

/// Importance-sampling estimate of `P(g(X) <= 0)` from i.i.d. auxiliary
/// samples (one per column).
///
/// `log_aux_pdf` must return the log-density the samples were drawn from;
/// it is only consulted on failing samples, where the weight matters. The
/// indicator costs one limit-state call per sample on the evaluator's
/// ledger. Samples whose weight is not finite (auxiliary error, `NaN`, or
/// overflow) are excluded from the average and counted; more than 0.1%
/// exclusions is an [`Error::ExperimentInvalid`].
pub fn is_estimate<F>(
    samples: &DMatrix<f64>,
    log_aux_pdf: F,
    evaluator: &Evaluator<'_>,
) -> Result<EstimateReport>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let d = evaluator.dim();
    if samples.nrows() != d {
        return Err(Error::DimensionMismatch(format!(
            "samples have dimension {}, limit state {d}",
            samples.nrows()
        )));
    }
    let n_total = samples.ncols();
    if n_total == 0 {
        return Err(Error::InvalidConfig("need at least one sample".into()));
    }
    let mut sum_w = 0.0;
    let mut sum_w2 = 0.0;
    let mut max_w = 0.0_f64;
    let mut excluded = 0usize;
    for j in 0..n_total {
        let x = samples.column(j).into_owned();
        let g = evaluator.value(&x);
        if g.is_nan() {
            excluded += 1;
            continue;
        }
        if g > 0.0 {
            continue; // safe sample: indicator zero, weight irrelevant
        }
        let log_aux = match log_aux_pdf(&x) {
            Ok(v) => v,
            Err(_) => {
                excluded += 1;
                continue;
            }
        };
        let w = (log_standard_normal(&x) - log_aux).exp();
        if !w.is_finite() {
            excluded += 1;
            continue;
        }
        sum_w += w;
        sum_w2 += w * w;
        max_w = max_w.max(w);
    }
    if excluded as f64 > 0.001 * n_total as f64 {
        return Err(Error::ExperimentInvalid(format!(
            "{excluded} of {n_total} importance weights were not finite (allowed: 0.1%)"
        )));
    }
    let n_valid = n_total - excluded;
    let p_hat = sum_w / n_valid as f64;
    Ok(EstimateReport {
        p_hat,
        n_samples: n_valid,
        excluded_samples: excluded,
        weight_stats: WeightStats {
            max: max_w,
            mean: p_hat,
            effective_sample_size: if sum_w2 > 0.0 {
                sum_w * sum_w / sum_w2
            } else {
                0.0
            },
        },
        ledger: evaluator.ledger().snapshot(),
    })
}

/// Crude Monte Carlo estimate: the failure fraction of `n >= 1` independent
/// standard-normal draws. Costs exactly `n` limit-state calls.
pub fn crude_mc<R: Rng + ?Sized>(
    evaluator: &Evaluator<'_>,
    n: usize,
    rng: &mut R,
) -> Result<EstimateReport> {
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one sample".into()));
    }
    let d = evaluator.dim();
    let mut failures = 0usize;
    for _ in 0..n {
        let x = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        if evaluator.value(&x) <= 0.0 {
            failures += 1;
        }
    }
    let p_hat = failures as f64 / n as f64;
    Ok(EstimateReport {
        p_hat,
        n_samples: n,
        excluded_samples: 0,
        weight_stats: WeightStats {
            max: if failures > 0 { 1.0 } else { 0.0 },
            mean: p_hat,
            // Indicator weights: (sum w)^2 / sum w^2 is the failure count.
            effective_sample_size: failures as f64,
        },
        ledger: evaluator.ledger().snapshot(),
    })
}

/// Normalized root-mean-square error of `estimates` against `p_ref > 0`:
/// `sqrt(mean((p_hat - p_ref)^2)) / p_ref`.
pub fn nrmse(estimates: &[f64], p_ref: f64) -> f64 {
    assert!(p_ref > 0.0, "reference probability must be positive");
    assert!(!estimates.is_empty(), "need at least one estimate");
    let mean_sq = estimates
        .iter()
        .map(|e| (e - p_ref) * (e - p_ref))
        .sum::<f64>()
        / estimates.len() as f64;
    mean_sq.sqrt() / p_ref
}

/// Theoretical nRMSE of crude Monte Carlo with `n` samples at failure
/// probability `p`: `sqrt((1 - p) / (n p))`.
pub fn crude_mc_nrmse(p: f64, n: usize) -> f64 {
    assert!(p > 0.0 && p <= 1.0, "probability must lie in (0, 1]");
    assert!(n >= 1, "need at least one sample");
    ((1.0 - p) / (n as f64 * p)).sqrt()
}

/// Aggregates per-repetition reports into an [`ExperimentSummary`].
///
/// `failure_count` repetitions failed outright (e.g. diverged sampling) and
/// contribute no estimate; they are tolerated while they make up less than
/// 2% of all repetitions, otherwise the whole experiment is invalid.
pub fn summarize(
    reports: &[EstimateReport],
    p_ref: f64,
    failure_count: usize,
) -> Result<ExperimentSummary> {
    if reports.is_empty() {
        return Err(Error::InvalidConfig(
            "need at least one successful repetition".into(),
        ));
    }
    if !(p_ref > 0.0 && p_ref.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "reference probability must be positive and finite, got {p_ref}"
        )));
    }
    let total = reports.len() + failure_count;
    if failure_count as f64 >= 0.02 * total as f64 {
        return Err(Error::ExperimentInvalid(format!(
            "{failure_count} of {total} repetitions failed (allowed: fewer than 2%)"
        )));
    }
    let estimates: Vec<f64> = reports.iter().map(|r| r.p_hat).collect();
    let n = reports.len() as f64;
    let mean_of = |f: &dyn Fn(&EstimateReport) -> f64| -> f64 {
        reports.iter().map(|r| f(r)).sum::<f64>() / n
    };
    Ok(ExperimentSummary {
        reps: reports.len(),
        p_ref,
        nrmse: nrmse(&estimates, p_ref),
        mean_estimate: estimates.iter().sum::<f64>() / n,
        call_means: CallMeans {
            lsf_calls: mean_of(&|r| r.ledger.lsf_calls as f64),
            gradient_calls: mean_of(&|r| r.ledger.gradient_calls as f64),
            fd_calls: mean_of(&|r| r.ledger.fd_calls as f64),
            total_calls: mean_of(&|r| r.ledger.total_calls() as f64),
        },
        failure_count,
    })
}

/// Lipschitz/curvature constants of a limit state, supplied by the
/// benchmark definition when known analytically.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    /// Lipschitz constant `K` of `g`.
    pub lipschitz: f64,
    /// Lipschitz constant `G` of `grad g`.
    pub grad_lipschitz: f64,
    /// Infimum over `x` of the smallest Hessian eigenvalue of `g`
    /// (exactly zero for linear limit states).
    pub hessian_floor: f64,
}

/// Monte Carlo budgets and optional analytic inputs for
/// [`theory_diagnostics`].
#[derive(Debug, Clone)]
pub struct TheoryOptions {
    /// Nominal-law draws for the band probability `P(0 < g(Z) < 2 mu)`.
    pub band_samples: usize,
    /// Total rejection-sampling draws allowed for the conditional failure
    /// law across all pairs.
    pub rejection_cap: u64,
    /// Analytic smoothness constants, when the benchmark provides them.
    pub constants: Option<SmoothnessConstants>,
    /// Truncation bound `r` on `|g|`; required together with `constants`.
    pub truncation_bound: Option<f64>,
}

impl Default for TheoryOptions {
    fn default() -> Self {
        Self {
            band_samples: 100_000,
            rejection_cap: 10_000_000,
            constants: None,
            truncation_bound: None,
        }
    }
}

/// Empirical terms of the a priori nRMSE bound for importance sampling from
/// the smoothed optimal density, plus the potential's
/// log-concavity/log-smoothness constants when computable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryDiagnostics {
    /// `exp(-mu/sigma)`, the indicator-smoothing tail mass.
    pub smoothing_tail: f64,
    /// Monte Carlo estimate of `P(0 < g(Z) < 2 mu)` under the nominal law.
    pub band_probability: f64,
    /// Monte Carlo estimate of `E[|g(X1) - g(Y)|^2 1{g(X1) <= 0}]` with
    /// `X1` from the supplied smoothed-density sample and `Y` an
    /// independent draw of the conditional failure law.
    pub coupling_moment: f64,
    /// `exp(-2 mu/sigma) / sigma^2` times the coupling moment: the third
    /// addend of the bound.
    pub coupling_term: f64,
    /// Log-concavity constant `alpha = min(hessian floor, 0)/sigma + 1` of
    /// the rare-event potential; exact for zero-Hessian limit states, a
    /// conservative lower bound otherwise. `None` without constants.
    pub alpha_sigma: Option<f64>,
    /// Log-smoothness constant
    /// `L = exp((r - mu)/sigma) K^2/sigma^2 + 2G/sigma + 1`.
    /// `None` without constants.
    pub l_sigma: Option<f64>,
}

impl TheoryDiagnostics {
    /// A priori bound on the nRMSE of the importance-sampling estimate with
    /// `n_samples` draws from the smoothed optimal density at failure
    /// probability `p`:
    ///
    /// ```text
    /// 6 / (sqrt(N) p) * sqrt(tail + band + coupling_term)
    /// ```
    pub fn nrmse_bound(&self, n_samples: usize, p: f64) -> f64 {
        assert!(n_samples >= 1, "need at least one sample");
        assert!(p > 0.0, "failure probability must be positive");
        6.0 / ((n_samples as f64).sqrt() * p)
            * (self.smoothing_tail + self.band_probability + self.coupling_term).sqrt()
    }
}

/// Computes the empirically accessible terms of the a priori nRMSE bound.
///
/// `samples_from_smoothed` must hold (approximate) draws of the smoothed
/// optimal density, one per column — e.g. a long overdamped-Langevin run, or
/// rejection sampling in low dimension. The band probability uses fresh
/// nominal draws; the coupling moment pairs each failing sample with an
/// independent rejection-sampled draw of the conditional failure law, which
/// is only practical when the failure probability is not too small. The
/// contraction constants are filled in when `options.constants` is present,
/// which then requires `options.truncation_bound`.
pub fn theory_diagnostics<R: Rng + ?Sized>(
    evaluator: &Evaluator<'_>,
    smoothing: &SmoothingConfig,
    samples_from_smoothed: &DMatrix<f64>,
    options: &TheoryOptions,
    rng: &mut R,
) -> Result<TheoryDiagnostics> {
    let d = evaluator.dim();
    if samples_from_smoothed.nrows() != d {
        return Err(Error::DimensionMismatch(format!(
            "samples have dimension {}, limit state {d}",
            samples_from_smoothed.nrows()
        )));
    }
    if samples_from_smoothed.ncols() == 0 {
        return Err(Error::InvalidConfig(
            "need at least one smoothed-density sample".into(),
        ));
    }
    if options.band_samples == 0 {
        return Err(Error::InvalidConfig(
            "need at least one band-probability draw".into(),
        ));
    }
    let sigma = smoothing.sigma();
    let mu = smoothing.mu();
    let smoothing_tail = (-mu / sigma).exp();

    let mut in_band = 0usize;
    for _ in 0..options.band_samples {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = evaluator.value(&z);
        if g > 0.0 && g < 2.0 * mu {
            in_band += 1;
        }
    }
    let band_probability = in_band as f64 / options.band_samples as f64;

    let n = samples_from_smoothed.ncols();
    let mut attempts: u64 = 0;
    let mut acc = 0.0;
    for j in 0..n {
        let x = samples_from_smoothed.column(j).into_owned();
        let gx = evaluator.value(&x);
        if !(gx <= 0.0) {
            continue; // indicator zero: this pair contributes nothing
        }
        let gy = loop {
            if attempts >= options.rejection_cap {
                return Err(Error::Numerical {
                    context: "theory_diagnostics",
                    detail: format!(
                        "rejection sampling of the conditional failure law exhausted {} draws",
                        options.rejection_cap
                    ),
                });
            }
            attempts += 1;
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let g = evaluator.value(&z);
            if g <= 0.0 {
                break g;
            }
        };
        acc += (gx - gy) * (gx - gy);
    }
    let coupling_moment = acc / n as f64;
    let coupling_term = (-2.0 * mu / sigma).exp() / (sigma * sigma) * coupling_moment;

    let (alpha_sigma, l_sigma) = match options.constants {
        None => (None, None),
        Some(c) => {
            if !(c.lipschitz >= 0.0 && c.lipschitz.is_finite())
                || !(c.grad_lipschitz >= 0.0 && c.grad_lipschitz.is_finite())
                || !c.hessian_floor.is_finite()
            {
                return Err(Error::InvalidConfig(format!(
                    "invalid smoothness constants: K = {}, G = {}, hessian floor = {}",
                    c.lipschitz, c.grad_lipschitz, c.hessian_floor
                )));
            }
            let r = options.truncation_bound.ok_or_else(|| {
                Error::InvalidConfig(
                    "smoothness constants need a truncation bound on |g|".into(),
                )
            })?;
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "truncation bound must be positive and finite, got {r}"
                )));
            }
            let alpha = c.hessian_floor.min(0.0) / sigma + 1.0;
            let l = ((r - mu) / sigma).exp() * c.lipschitz * c.lipschitz / (sigma * sigma)
                + 2.0 * c.grad_lipschitz / sigma
                + 1.0;
            (Some(alpha), Some(l))
        }
    };
    Ok(TheoryDiagnostics {
        smoothing_tail,
        band_probability,
        coupling_moment,
        coupling_term,
        alpha_sigma,
        l_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsf::fixtures::Constant;
    use crate::lsf::{CallLedger, LinearLsf};
    use crate::smoothing::{log_smooth_indicator, smooth_indicator};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::f64::consts::PI;

    /// Simpson integration of `f` over `[a, b]` with `steps` intervals.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, steps: usize) -> f64 {
        assert!(steps % 2 == 0);
        let h = (b - a) / steps as f64;
        let mut acc = f(a) + f(b);
        for i in 1..steps {
            let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += weight * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    fn standard_normal_pdf(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
    }

    #[test]
    fn auxiliary_equal_to_the_nominal_gives_exactly_unit_estimate() {
        let lsf = Constant { value: -1.0, d: 5 };
        let ledger = CallLedger::new();
        let eval = Evaluator::auto(&lsf, &ledger);
        let mut rng = ChaCha12Rng::seed_from_u64(601);
        let n = 400;
        let samples = DMatrix::from_fn(5, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let report = is_estimate(&samples, |x| Ok(log_standard_normal(x)), &eval).unwrap();
        assert_eq!(report.p_hat, 1.0);
        assert_eq!(report.weight_stats.max, 1.0);
        assert_eq!(report.weight_stats.effective_sample_size, n as f64);
        assert_eq!(report.n_samples, n);
        assert_eq!(report.excluded_samples, 0);
        assert_eq!(report.ledger.lsf_calls, n as u64);
    }

    #[test]
    fn shifted_normal_auxiliary_reproduces_the_tail_probability() {
        // A = {x >= 2} through g(x) = 2 - x, auxiliary N(2, 1). Reference:
        // the complementary standard normal CDF at 2.
        let p_ref = 0.022750131948179207;
        let lsf = LinearLsf::new(1, 2.0).unwrap();
        let reps = 1000;
        let n = 1000;
        let mut estimates = Vec::with_capacity(reps);
        let mut rng = ChaCha12Rng::seed_from_u64(602);
        for _ in 0..reps {
            let ledger = CallLedger::new();
            let eval = Evaluator::auto(&lsf, &ledger);
            let samples =
                DMatrix::from_fn(1, n, |_, _| 2.0 + rng.sample::<f64, _>(StandardNormal));
            let report = is_estimate(
                &samples,
                |x| Ok(-0.5 * (2.0 * PI).ln() - 0.5 * (x[0] - 2.0) * (x[0] - 2.0)),
                &eval,
            )
            .unwrap();
            estimates.push(report.p_hat);
        }
        let mean: f64 = estimates.iter().sum::<f64>() / reps as f64;
        let var: f64 = estimates
            .iter()
            .map(|e| (e - mean) * (e - mean))
            .sum::<f64>()
            / (reps as f64 - 1.0);
        let se = (var / reps as f64).sqrt();
        assert!(
            (mean - p_ref).abs() <= 3.0 * se,
            "mean {mean} vs {p_ref} (3 SE = {})",
            3.0 * se
        );
        // Two-sided t-test at the 1% level (dof 999): fail to reject.
        let t = (mean - p_ref) / se;
        assert!(t.abs() <= 2.5807, "t statistic {t}");
    }

    #[test]
    fn nonfinite_weights_are_excluded_and_budgeted() {
        let lsf = Constant { value: -1.0, d: 2 };
        let ledger = CallLedger::new();
        let eval = Evaluator::auto(&lsf, &ledger);
        let n = 2000;
        // Column j has first coordinate j; the auxiliary poisons a chosen
        // set of columns with NaN.
        let samples = DMatrix::from_fn(2, n, |i, j| if i == 0 { j as f64 } else { 0.25 });
        let poisoned = |bad: std::ops::Range<usize>| {
            move |x: &DVector<f64>| {
                if bad.contains(&(x[0] as usize)) {
                    Ok(f64::NAN)
                } else {
                    Ok(log_standard_normal(x))
                }
            }
        };
        // One bad column out of 2000 = 0.05%: reported, tolerated.
        let report = is_estimate(&samples, poisoned(7..8), &eval).unwrap();
        assert_eq!(report.excluded_samples, 1);
        assert_eq!(report.n_samples, n - 1);
        assert_eq!(report.p_hat, 1.0); // survivors keep exactly unit weights
        // Three bad columns = 0.15% > 0.1%: the run is invalid.
        let err = is_estimate(&samples, poisoned(7..10), &eval).unwrap_err();
        assert!(matches!(err, Error::ExperimentInvalid(_)));
    }

    #[test]
    fn log_space_weights_match_the_naive_ratio_when_safe() {
        // All samples fail; the auxiliary is N(0.3, I). Both densities stay
        // far from underflow, so the naive linear-space ratio is a valid
        // oracle for the weights.
        let lsf = Constant { value: -1.0, d: 3 };
        let ledger = CallLedger::new();
        let eval = Evaluator::auto(&lsf, &ledger);
        let mut rng = ChaCha12Rng::seed_from_u64(603);
        let n = 500;
        let samples = DMatrix::from_fn(3, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let shift = 0.3;
        let log_aux = |x: &DVector<f64>| {
            let mut acc = -0.5 * 3.0 * (2.0 * PI).ln();
            for i in 0..3 {
                acc -= 0.5 * (x[i] - shift) * (x[i] - shift);
            }
            Ok(acc)
        };
        let report = is_estimate(&samples, log_aux, &eval).unwrap();
        let mut naive_max = 0.0_f64;
        for j in 0..n {
            let x = samples.column(j);
            let rho: f64 = (0..3)
                .map(|i| (-0.5 * x[i] * x[i]).exp() / (2.0 * PI).sqrt())
                .product();
            let aux: f64 = (0..3)
                .map(|i| (-0.5 * (x[i] - shift) * (x[i] - shift)).exp() / (2.0 * PI).sqrt())
                .product();
            naive_max = naive_max.max(rho / aux);
        }
        let max = report.weight_stats.max;
        assert!(
            (max - naive_max).abs() <= 1e-12 * naive_max,
            "max weight {max} vs naive {naive_max}"
        );
        assert!(report.weight_stats.effective_sample_size <= report.n_samples as f64);
    }

    #[test]
    fn crude_monte_carlo_handles_certain_and_symmetric_events() {
        let mut rng = ChaCha12Rng::seed_from_u64(604);
        let sure = Constant { value: -1.0, d: 3 };
        let ledger = CallLedger::new();
        let eval = Evaluator::auto(&sure, &ledger);
        let report = crude_mc(&eval, 500, &mut rng).unwrap();
        assert_eq!(report.p_hat, 1.0);
        assert_eq!(report.weight_stats.effective_sample_size, 500.0);
        let never = Constant { value: 1.0, d: 3 };
        let ledger = CallLedger::new();
        let eval = Evaluator::auto(&never, &ledger);
        let report = crude_mc(&eval, 500, &mut rng).unwrap();
        assert_eq!(report.p_hat, 0.0);
        assert_eq!(report.weight_stats.max, 0.0);
        // g(x) = -x: failure probability exactly 1/2 by symmetry.
        let half = LinearLsf::new(1, 0.0).unwrap();
        let ledger = CallLedger::new();
        let eval = Evaluator::auto(&half, &ledger);
        let n = 10_000;
        let report = crude_mc(&eval, n, &mut rng).unwrap();
        let bound = 3.0 * (0.25 / n as f64).sqrt();
        assert!((report.p_hat - 0.5).abs() <= bound, "{}", report.p_hat);
        assert_eq!(report.ledger.lsf_calls, n as u64);
        assert_eq!(report.n_samples, n);
        assert!(crude_mc(&eval, 0, &mut rng).is_err());
    }

    #[test]
    fn nrmse_matches_hand_values_and_is_scale_covariant() {
        assert_eq!(nrmse(&[0.25, 0.25, 0.25], 0.25), 0.0);
        assert_eq!(nrmse(&[0.5], 0.25), 1.0);
        let estimates = [0.11, 0.094, 0.102, 0.08, 0.13];
        let base = nrmse(&estimates, 0.1);
        // Power-of-two scalings commute with every rounding step: exact.
        for scale in [0.25_f64, 8.0, 1024.0] {
            let scaled: Vec<f64> = estimates.iter().map(|e| e * scale).collect();
            assert_eq!(nrmse(&scaled, 0.1 * scale), base);
        }
        let scaled: Vec<f64> = estimates.iter().map(|e| e * 3.0).collect();
        assert!((nrmse(&scaled, 0.1 * 3.0) - base).abs() <= 1e-14 * base);
    }

    #[test]
    fn crude_monte_carlo_nrmse_follows_the_binomial_formula() {
        // P(g <= 0) = 0.1 for g(x) = beta - x with beta the 90% normal
        // quantile.
        let beta = 1.2815515655446004;
        let lsf = LinearLsf::new(1, beta).unwrap();
        let p = 0.1;
        let n = 100;
        let reps = 10_000;
        let mut rng = ChaCha12Rng::seed_from_u64(605);
        let mut estimates = Vec::with_capacity(reps);
        for _ in 0..reps {
            let ledger = CallLedger::new();
            let eval = Evaluator::auto(&lsf, &ledger);
            estimates.push(crude_mc(&eval, n, &mut rng).unwrap().p_hat);
        }
        let observed = nrmse(&estimates, p);
        let predicted = crude_mc_nrmse(p, n);
        assert!((predicted - 0.3).abs() <= 1e-12); // sqrt(0.9 / 10)
        assert!(
            (observed - predicted).abs() <= 0.05 * predicted,
            "observed {observed} vs predicted {predicted}"
        );
    }

    #[test]
    fn theory_tail_term_matches_the_closed_form() {
        let smoothing = SmoothingConfig::from_sigma_r(0.1).unwrap();
        let lsf = LinearLsf::new(1, 2.5).unwrap();
        let ledger = CallLedger::new();
        let eval = Evaluator::auto(&lsf, &ledger);
        let mut rng = ChaCha12Rng::seed_from_u64(606);
        let samples = DMatrix::from_fn(1, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let options = TheoryOptions {
            band_samples: 10,
            ..TheoryOptions::default()
        };
        let diag = theory_diagnostics(&eval, &smoothing, &samples, &options, &mut rng).unwrap();
        // exp(-mu/sigma) for the sqrt-scaled smoothing at sigma_r = 0.1.
        let reference = 4.4820749672867331e-6;
        assert!(
            (diag.smoothing_tail - reference).abs() <= 1e-12 * reference,
            "{}",
            diag.smoothing_tail
        );
        assert!(diag.alpha_sigma.is_none() && diag.l_sigma.is_none());
    }

    #[test]
    fn smoothness_constants_substitute_into_the_contraction_formulas() {
        let smoothing = SmoothingConfig::from_sigma_r(0.1).unwrap();
        let (sigma, mu) = (smoothing.sigma(), smoothing.mu());
        let lsf = LinearLsf::new(4, 3.0).unwrap();
        let ledger = CallLedger::new();
        let eval = Evaluator::auto(&lsf, &ledger);
        let mut rng = ChaCha12Rng::seed_from_u64(607);
        let samples = DMatrix::from_fn(4, 8, |_, _| rng.sample::<f64, _>(StandardNormal));
        let constants = SmoothnessConstants {
            lipschitz: 1.0,
            grad_lipschitz: 0.0,
            hessian_floor: 0.0,
        };
        // Constants without a truncation bound: capability error.
        let mut options = TheoryOptions {
            band_samples: 10,
            constants: Some(constants),
            ..TheoryOptions::default()
        };
        assert!(theory_diagnostics(&eval, &smoothing, &samples, &options, &mut rng).is_err());
        options.truncation_bound = Some(1.0);
        let diag = theory_diagnostics(&eval, &smoothing, &samples, &options, &mut rng).unwrap();
        // Linear limit state: zero Hessian gives alpha = 1 exactly, and
        // L = exp((r - mu)/sigma) K^2/sigma^2 + 2G/sigma + 1 with K = 1,
        // G = 0.
        assert_eq!(diag.alpha_sigma, Some(1.0));
        let expected_l = ((1.0 - mu) / sigma).exp() / (sigma * sigma) + 1.0;
        let l = diag.l_sigma.unwrap();
        assert!((l - expected_l).abs() <= 1e-12 * expected_l, "{l} vs {expected_l}");
    }

    #[test]
    fn error_bound_dominates_the_observed_error_in_one_dimension() {
        // g(x) = beta - x with p = Phi(-beta); the smoothed optimal density
        // is sampled exactly by rejection (accept a nominal draw with
        // probability F_sigma), so the observed nRMSE of the estimator can
        // be compared against the a priori bound. The bound is loose by
        // design; the assertion is validity, not tightness.
        let beta = 2.5;
        let p_ref = 0.0062096653257761352;
        let lsf = LinearLsf::new(1, beta).unwrap();
        for sigma_r in [1e-2, 1e-1] {
            let smoothing = SmoothingConfig::from_sigma_r(sigma_r).unwrap();
            // Normalizing constant of F_sigma * rho by quadrature.
            let z_sigma = simpson(
                |x| smooth_indicator(beta - x, &smoothing) * standard_normal_pdf(x),
                -12.0,
                12.0,
                48_000,
            );
            let mut rng = ChaCha12Rng::seed_from_u64(608);
            let draw_smoothed = |rng: &mut ChaCha12Rng| -> f64 {
                loop {
                    let z: f64 = rng.sample(StandardNormal);
                    if rng.random::<f64>() < smooth_indicator(beta - z, &smoothing) {
                        return z;
                    }
                }
            };
            let reps = 200;
            let n = 500;
            let mut estimates = Vec::with_capacity(reps);
            for _ in 0..reps {
                let ledger = CallLedger::new();
                let eval = Evaluator::auto(&lsf, &ledger);
                let samples = DMatrix::from_fn(1, n, |_, _| draw_smoothed(&mut rng));
                let log_aux = |x: &DVector<f64>| {
                    Ok(log_smooth_indicator(beta - x[0], &smoothing)
                        + log_standard_normal(x)
                        - z_sigma.ln())
                };
                estimates.push(is_estimate(&samples, log_aux, &eval).unwrap().p_hat);
            }
            let observed = nrmse(&estimates, p_ref);
            let diag_samples = DMatrix::from_fn(1, 2000, |_, _| draw_smoothed(&mut rng));
            let ledger = CallLedger::new();
            let eval = Evaluator::auto(&lsf, &ledger);
            let options = TheoryOptions {
                band_samples: 200_000,
                ..TheoryOptions::default()
            };
            let diag =
                theory_diagnostics(&eval, &smoothing, &diag_samples, &options, &mut rng).unwrap();
            let bound = diag.nrmse_bound(n, p_ref);
            assert!(
                bound >= observed,
                "sigma_r = {sigma_r}: bound {bound} below observed {observed}"
            );
            assert!(observed > 0.0 && bound.is_finite());
        }
    }

    #[test]
    fn summaries_average_calls_and_enforce_the_divergence_budget() {
        let make = |p_hat: f64, lsf_calls: u64| EstimateReport {
            p_hat,
            n_samples: 100,
            excluded_samples: 0,
            weight_stats: WeightStats {
                max: 1.0,
                mean: p_hat,
                effective_sample_size: 50.0,
            },
            ledger: LedgerSnapshot {
                lsf_calls,
                gradient_calls: lsf_calls / 2,
                fd_calls: 0,
            },
        };
        let reports: Vec<EstimateReport> = (0..98u64)
            .map(|i| make(0.01 + 1e-4 * i as f64, 1000 + i))
            .collect();
        let summary = summarize(&reports, 0.015, 1).unwrap();
        assert_eq!(summary.reps, 98);
        assert_eq!(summary.failure_count, 1);
        let estimates: Vec<f64> = reports.iter().map(|r| r.p_hat).collect();
        assert_eq!(summary.nrmse, nrmse(&estimates, 0.015));
        assert_eq!(
            summary.mean_estimate,
            estimates.iter().sum::<f64>() / 98.0
        );
        let mean_calls: f64 =
            reports.iter().map(|r| r.ledger.lsf_calls as f64).sum::<f64>() / 98.0;
        assert_eq!(summary.call_means.lsf_calls, mean_calls);
        assert_eq!(summary.call_means.total_calls, mean_calls);
        // Two failures out of 100 reach the 2% budget: invalid.
        let err = summarize(&reports, 0.015, 2).unwrap_err();
        assert!(matches!(err, Error::ExperimentInvalid(_)));
        assert!(summarize(&[], 0.015, 0).is_err());
    }
}
