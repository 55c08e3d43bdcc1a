//! Interacting Langevin samplers driving particle ensembles toward the
//! smoothed importance-sampling density.
//!
//! For an ensemble `X = [x_1 .. x_M]` with empirical mean `m_X` and
//! covariance factor `S = (X - m_X 1^T) / sqrt(M)`, one step of the
//! affine-invariant Langevin dynamics (ALDI) moves each particle by
//!
//! ```text
//! x_j <- x_j + [ -C_gamma grad V(x_j) + (1 - gamma) (d+1)/M (x_j - m_X) ] dt
//!             + sqrt(2 dt) B_gamma xi_j
//! ```
//!
//! where `C_gamma = (1-gamma) S S^T + gamma I` is the regularised ensemble
//! covariance, `B_gamma = [sqrt(1-gamma) S | sqrt(gamma) I]` is a
//! `d x (M+d)` square root of it, and `xi_j` is an `(M+d)`-dimensional
//! standard normal vector. The linear correction term makes the product of
//! targets invariant at finite ensemble size. `gamma = 1` recovers the
//! plain unadjusted Langevin algorithm (ULA); small `gamma` keeps the
//! dynamics nearly affine-invariant while guaranteeing full-rank diffusion.
//!
//! Products with `C_gamma` are evaluated as `(1-gamma) S (S^T G) + gamma G`,
//! so no `d x d` matrix is ever materialised.
//!
//! Step sizes adapt to the largest particle drift norm, runs terminate via a
//! cumulative moving-average stopping rule on the ensemble statistic
//! `(|grad V(X)|_F^2 + |X|_F^2) / M`, and a tempering schedule chains levels
//! with decreasing shifts `q` applied to the limit-state function. An
//! optional density-based clustering stage shares gradient evaluations
//! within particle clusters to save limit-state calls.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::clustering::{dbscan, shared_gradients, ClusterAssignment, DbscanConfig};
use crate::error::{Error, Result};
use crate::lsf::{Evaluator, LedgerSnapshot};
use crate::smoothing::{potential_gradient, smoothing_force, SmoothingConfig};

/// A particle ensemble: one column per particle, plus step bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    /// Particle positions, `d x M`, one column per particle.
    pub particles: DMatrix<f64>,
    /// Completed dynamics steps.
    pub iteration: usize,
    /// Accumulated simulated time (sum of accepted step sizes).
    pub elapsed_time: f64,
}

impl Ensemble {
    /// Wrap an existing `d x M` particle matrix.
    pub fn from_particles(particles: DMatrix<f64>) -> Result<Self> {
        if particles.nrows() == 0 || particles.ncols() == 0 {
            return Err(Error::InvalidConfig(format!(
                "ensemble needs at least one particle and one dimension, got {}x{}",
                particles.nrows(),
                particles.ncols()
            )));
        }
        if !particles.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig(
                "ensemble particles must be finite".to_owned(),
            ));
        }
        Ok(Self {
            particles,
            iteration: 0,
            elapsed_time: 0.0,
        })
    }

    /// Fresh ensemble of `m` independent standard normal particles in
    /// dimension `d`.
    pub fn standard_normal(d: usize, m: usize, rng: &mut impl Rng) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::InvalidConfig(format!(
                "ensemble needs at least one particle and one dimension, got {d}x{m}"
            )));
        }
        Ok(Self {
            particles: DMatrix::from_fn(d, m, |_, _| rng.sample(StandardNormal)),
            iteration: 0,
            elapsed_time: 0.0,
        })
    }

    /// State dimension `d`.
    pub fn dim(&self) -> usize {
        self.particles.nrows()
    }

    /// Ensemble size `M`.
    pub fn size(&self) -> usize {
        self.particles.ncols()
    }
}

/// Empirical ensemble mean.
pub fn ensemble_mean(ensemble: &Ensemble) -> DVector<f64> {
    // Sum then true division (not multiplication by a reciprocal), so that
    // ensembles of identical particles center to exactly zero.
    let mut mean = DVector::zeros(ensemble.dim());
    for col in ensemble.particles.column_iter() {
        mean += col;
    }
    mean /= ensemble.size() as f64;
    mean
}

/// Non-symmetric covariance factor `S = (X - m_X 1^T) / sqrt(M)`, a `d x M`
/// matrix with `S S^T` equal to the (biased) empirical covariance.
pub fn ensemble_cov_sqrt(ensemble: &Ensemble) -> DMatrix<f64> {
    let mean = ensemble_mean(ensemble);
    let inv_sqrt_m = 1.0 / (ensemble.size() as f64).sqrt();
    let mut s = ensemble.particles.clone();
    for mut col in s.column_iter_mut() {
        col -= &mean;
        col *= inv_sqrt_m;
    }
    s
}

/// Square root `B_gamma = [sqrt(1-gamma) S | sqrt(gamma) I]` of the
/// regularised covariance, as a `d x (M+d)` block matrix satisfying
/// `B_gamma B_gamma^T = (1-gamma) S S^T + gamma I`.
pub fn regularized_cov_sqrt(ensemble: &Ensemble, gamma: f64) -> Result<DMatrix<f64>> {
    check_gamma(gamma)?;
    let (d, m) = ensemble.particles.shape();
    let s = ensemble_cov_sqrt(ensemble);
    let mut root = DMatrix::zeros(d, m + d);
    let left = (1.0 - gamma).sqrt();
    let right = gamma.sqrt();
    for j in 0..m {
        for i in 0..d {
            root[(i, j)] = left * s[(i, j)];
        }
    }
    for i in 0..d {
        root[(i, m + i)] = right;
    }
    Ok(root)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) || !gamma.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "covariance regularisation gamma must lie in [0, 1], got {gamma}"
        )));
    }
    Ok(())
}

/// Drift matrix `-C_gamma G + (1-gamma) (d+1)/M (X - m_X 1^T)`, computed
/// from the covariance factor `s` without forming `C_gamma`.
fn drift_matrix(grads: &DMatrix<f64>, s: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let (d, m) = s.shape();
    let mut drift = grads * (-gamma);
    if gamma < 1.0 {
        // -(1-gamma) S (S^T G)
        let st_g = s.tr_mul(grads);
        drift.gemm(-(1.0 - gamma), s, &st_g, 1.0);
        // +(1-gamma) (d+1)/M (X - m_X 1^T) = +(1-gamma) (d+1)/sqrt(M) S
        let c = (1.0 - gamma) * (d as f64 + 1.0) / (m as f64).sqrt();
        drift.zip_apply(s, |di, si| *di += c * si);
    }
    drift
}

fn check_grad_shape(ensemble: &Ensemble, grads: &DMatrix<f64>) -> Result<()> {
    if grads.shape() != ensemble.particles.shape() {
        return Err(Error::DimensionMismatch(format!(
            "gradient matrix is {:?}, ensemble is {:?}",
            grads.shape(),
            ensemble.particles.shape()
        )));
    }
    Ok(())
}

/// One ALDI step with externally supplied gradients and noise.
///
/// `noise` must be `(M+d) x M`, one standard normal column per particle;
/// the first `M` rows drive the ensemble-spanned diffusion `sqrt(1-gamma) S`
/// and the last `d` rows the isotropic regularisation `sqrt(gamma) I`. With
/// `gamma = 1` the update uses only the last `d` rows and coincides exactly
/// with [`ula_step`] on them.
pub fn aldi_step(
    ensemble: &Ensemble,
    grads: &DMatrix<f64>,
    gamma: f64,
    dt: f64,
    noise: &DMatrix<f64>,
) -> Result<Ensemble> {
    check_gamma(gamma)?;
    check_grad_shape(ensemble, grads)?;
    let (d, m) = ensemble.particles.shape();
    if noise.shape() != (m + d, m) {
        return Err(Error::DimensionMismatch(format!(
            "noise matrix is {:?}, expected ({}, {})",
            noise.shape(),
            m + d,
            m
        )));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "step size must be positive and finite, got {dt}"
        )));
    }

    let s = ensemble_cov_sqrt(ensemble);
    let drift = drift_matrix(grads, &s, gamma);
    let mut x = ensemble.particles.clone();
    x.zip_apply(&drift, |xi, di| *xi += dt * di);

    let sqrt_2dt = (2.0 * dt).sqrt();
    if gamma < 1.0 {
        // sqrt(2 dt) sqrt(1-gamma) S xi_top
        let top = noise.rows(0, m);
        x.gemm(sqrt_2dt * (1.0 - gamma).sqrt(), &s, &top, 1.0);
    }
    if gamma > 0.0 {
        let scale = sqrt_2dt * gamma.sqrt();
        x.zip_apply(&noise.rows(m, d), |xi, ni| *xi += scale * ni);
    }

    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::StepDiverged {
            iteration: ensemble.iteration,
        });
    }
    Ok(Ensemble {
        particles: x,
        iteration: ensemble.iteration + 1,
        elapsed_time: ensemble.elapsed_time + dt,
    })
}

/// One plain ULA step `X <- X - dt G + sqrt(2 dt) N` with `d x M` noise.
pub fn ula_step(
    ensemble: &Ensemble,
    grads: &DMatrix<f64>,
    dt: f64,
    noise: &DMatrix<f64>,
) -> Result<Ensemble> {
    check_grad_shape(ensemble, grads)?;
    if noise.shape() != ensemble.particles.shape() {
        return Err(Error::DimensionMismatch(format!(
            "noise matrix is {:?}, ensemble is {:?}",
            noise.shape(),
            ensemble.particles.shape()
        )));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "step size must be positive and finite, got {dt}"
        )));
    }
    let mut x = ensemble.particles.clone();
    x.zip_apply(grads, |xi, gi| *xi += dt * (-gi));
    let sqrt_2dt = (2.0 * dt).sqrt();
    x.zip_apply(noise, |xi, ni| *xi += sqrt_2dt * ni);
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::StepDiverged {
            iteration: ensemble.iteration,
        });
    }
    Ok(Ensemble {
        particles: x,
        iteration: ensemble.iteration + 1,
        elapsed_time: ensemble.elapsed_time + dt,
    })
}

/// Adaptive step size `step_scale / max_j |drift_j|`.
///
/// Returns [`Error::DegenerateDrift`] when every particle drift vanishes;
/// the ensemble is then already stationary and stepping is meaningless.
pub fn adaptive_dt(
    ensemble: &Ensemble,
    grads: &DMatrix<f64>,
    gamma: f64,
    step_scale: f64,
) -> Result<f64> {
    check_gamma(gamma)?;
    check_grad_shape(ensemble, grads)?;
    if !(step_scale > 0.0) || !step_scale.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "step scale must be positive and finite, got {step_scale}"
        )));
    }
    let s = ensemble_cov_sqrt(ensemble);
    let drift = drift_matrix(grads, &s, gamma);
    let max_norm = drift
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0_f64, f64::max);
    if max_norm == 0.0 {
        return Err(Error::DegenerateDrift);
    }
    if !max_norm.is_finite() {
        return Err(Error::Numerical {
            context: "adaptive step size",
            detail: "non-finite drift norm".to_owned(),
        });
    }
    Ok(step_scale / max_norm)
}

/// Running cumulative average of the stopping statistic.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CumulativeState {
    absorbed: usize,
    value: f64,
}

impl CumulativeState {
    /// Number of statistics absorbed so far.
    pub fn absorbed(&self) -> usize {
        self.absorbed
    }

    /// Current cumulative average.
    pub fn value(&self) -> f64 {
        self.value
    }
}

/// Absorb the statistic of the current iterate into the cumulative average
/// and decide whether to stop.
///
/// With `stat_k = (|G|_F^2 + |X|_F^2) / M` at iteration `k` (zero-based),
/// the average obeys `V_k = (stat_k + k V_{k-1}) / (k+1)`. The rule fires
/// once `k >= k_min` and `|V_k - V_{k-1}| / V_k <= eps_cumu`; it also fires
/// immediately when `V_k = 0` (fully degenerate ensemble).
pub fn stopping_update(
    state: CumulativeState,
    ensemble: &Ensemble,
    grads: &DMatrix<f64>,
    eps_cumu: f64,
    k_min: usize,
) -> (CumulativeState, bool) {
    let m = ensemble.size() as f64;
    let stat = (grads.norm_squared() + ensemble.particles.norm_squared()) / m;
    let k = state.absorbed;
    let prev = state.value;
    let value = (stat + k as f64 * prev) / (k as f64 + 1.0);
    let next = CumulativeState {
        absorbed: k + 1,
        value,
    };
    let stop = if value == 0.0 {
        true
    } else {
        k >= k_min && ((value - prev) / value).abs() <= eps_cumu
    };
    (next, stop)
}

/// Tuning for one ALDI run at a fixed smoothing level.
#[derive(Debug, Clone)]
pub struct AldiConfig {
    /// Covariance regularisation in `(0, 1]`; `1` is plain ULA.
    pub gamma: f64,
    /// Numerator of the adaptive step size.
    pub step_scale: f64,
    /// Relative tolerance of the cumulative stopping rule.
    pub eps_cumu: f64,
    /// Minimum iterations before the stopping rule may fire.
    pub k_min: usize,
    /// Hard iteration cap; `0` disables stepping entirely.
    pub k_max: usize,
    /// Gradient sharing by density-based clustering, if enabled.
    pub dbscan: Option<DbscanConfig>,
}

impl Default for AldiConfig {
    fn default() -> Self {
        Self {
            gamma: 1e-3,
            step_scale: 0.1,
            eps_cumu: 0.1,
            k_min: 10,
            k_max: 2000,
            dbscan: None,
        }
    }
}

impl AldiConfig {
    /// Check invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.step_scale > 0.0) || !self.step_scale.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "step scale must be positive and finite, got {}",
                self.step_scale
            )));
        }
        if !(self.eps_cumu > 0.0 && self.eps_cumu < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "stopping tolerance must lie in (0, 1), got {}",
                self.eps_cumu
            )));
        }
        if self.k_min == 0 {
            return Err(Error::InvalidConfig(
                "k_min must be at least 1".to_owned(),
            ));
        }
        if self.k_max != 0 && self.k_max <= self.k_min {
            return Err(Error::InvalidConfig(format!(
                "k_max ({}) must exceed k_min ({}) or be 0",
                self.k_max, self.k_min
            )));
        }
        if let Some(db) = &self.dbscan {
            db.validate()?;
        }
        Ok(())
    }
}

/// Sequence of smoothing levels with per-level regularisation and stopping
/// tolerance.
#[derive(Debug, Clone)]
pub struct LevelSchedule {
    /// Strictly decreasing level shifts, ending at exactly `0`.
    pub levels: Vec<f64>,
    /// Covariance regularisation per level.
    pub gammas: Vec<f64>,
    /// Stopping tolerance per level.
    pub eps_cumus: Vec<f64>,
}

impl LevelSchedule {
    /// The four-level tempering schedule used by the benchmark experiments;
    /// only the stopping tolerance of the final level varies per problem.
    pub fn standard(final_eps: f64) -> Self {
        Self {
            levels: vec![1.0, 0.5, 0.05, 0.0],
            gammas: vec![1.0, 0.5, 0.01, 1e-3],
            eps_cumus: vec![0.1, 0.1, 0.1, final_eps],
        }
    }

    /// Single level at shift `0`.
    pub fn single(gamma: f64, eps_cumu: f64) -> Self {
        Self {
            levels: vec![0.0],
            gammas: vec![gamma],
            eps_cumus: vec![eps_cumu],
        }
    }

    /// Number of levels.
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    /// True when the schedule has no levels.
    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Check invariants: non-empty, matching lengths, strictly decreasing
    /// levels reaching exactly `0`, `gamma` in `(0, 1]`, tolerances in
    /// `(0, 1)`.
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidConfig("schedule has no levels".to_owned()));
        }
        if self.gammas.len() != self.levels.len() || self.eps_cumus.len() != self.levels.len() {
            return Err(Error::InvalidConfig(format!(
                "schedule lengths disagree: {} levels, {} gammas, {} tolerances",
                self.levels.len(),
                self.gammas.len(),
                self.eps_cumus.len()
            )));
        }
        for pair in self.levels.windows(2) {
            if !(pair[1] < pair[0]) {
                return Err(Error::InvalidConfig(format!(
                    "levels must strictly decrease, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if *self.levels.last().unwrap() != 0.0 {
            return Err(Error::InvalidConfig(format!(
                "final level must be exactly 0, got {}",
                self.levels.last().unwrap()
            )));
        }
        for &g in &self.gammas {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "schedule gamma must lie in (0, 1], got {g}"
                )));
            }
        }
        for &e in &self.eps_cumus {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "schedule stopping tolerance must lie in (0, 1), got {e}"
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of one level of dynamics.
#[derive(Debug, Clone, Serialize)]
pub struct LevelDiagnostics {
    /// Level shift `q` this stage ran at.
    pub level: f64,
    /// Gradient rounds performed (one per loop iteration, including the
    /// final round consumed by the stopping rule).
    pub gradient_rounds: usize,
    /// Accepted dynamics steps (`gradient_rounds - 1` when stopped).
    pub steps: usize,
    /// Simulated time accumulated at this level.
    pub stopping_time: f64,
    /// Whether the stopping rule fired (`false` means the iteration cap
    /// truncated the level).
    pub stopped: bool,
    /// Cluster count of the last shared-gradient round, if clustering ran.
    pub clusters: Option<usize>,
}

/// Outcome of a full run (one level or a whole schedule).
#[derive(Debug, Clone, Serialize)]
pub struct RunDiagnostics {
    /// Per-level outcomes, in execution order.
    pub levels: Vec<LevelDiagnostics>,
    /// Limit-state work performed during the run.
    pub calls: LedgerSnapshot,
}

impl RunDiagnostics {
    fn collect(levels: Vec<LevelDiagnostics>, before: LedgerSnapshot, after: LedgerSnapshot) -> Self {
        Self {
            levels,
            calls: LedgerSnapshot {
                lsf_calls: after.lsf_calls - before.lsf_calls,
                gradient_calls: after.gradient_calls - before.gradient_calls,
                fd_calls: after.fd_calls - before.fd_calls,
            },
        }
    }

    /// True when any level hit its iteration cap without converging.
    pub fn truncated(&self) -> bool {
        self.levels.iter().any(|l| !l.stopped)
    }

    /// Total accepted steps across levels.
    pub fn total_steps(&self) -> usize {
        self.levels.iter().map(|l| l.steps).sum()
    }

    /// Total gradient rounds across levels.
    pub fn total_gradient_rounds(&self) -> usize {
        self.levels.iter().map(|l| l.gradient_rounds).sum()
    }
}

/// Clustering bookkeeping threaded across levels: the burn-in and refresh
/// period count gradient rounds globally over the whole schedule, and labels
/// persist between refreshes while cluster means track current positions.
#[derive(Debug, Default)]
struct ClusterState {
    rounds: usize,
    labels: Option<Vec<i32>>,
}

/// Cluster means recomputed from current positions under fixed labels.
fn means_by_label(points: &DMatrix<f64>, labels: &[i32]) -> DMatrix<f64> {
    let k = labels
        .iter()
        .copied()
        .max()
        .map_or(0, |l| (l.max(-1) + 1) as usize);
    let d = points.nrows();
    let mut means = DMatrix::zeros(d, k);
    let mut counts = vec![0u32; k];
    for (j, &label) in labels.iter().enumerate() {
        if label >= 0 {
            let c = label as usize;
            let mut col = means.column_mut(c);
            col += points.column(j);
            counts[c] += 1;
        }
    }
    for c in 0..k {
        // Labels come from a clustering pass, so every cluster is nonempty.
        means.column_mut(c).unscale_mut(f64::from(counts[c]));
    }
    means
}

/// One gradient round: either dense per-particle gradients, or (past the
/// clustering burn-in) gradients shared within clusters. Returns the
/// gradient matrix and the cluster count when sharing was active.
fn gradient_round(
    particles: &DMatrix<f64>,
    evaluator: &Evaluator<'_>,
    smoothing: &SmoothingConfig,
    dbscan_cfg: Option<&DbscanConfig>,
    cluster: &mut ClusterState,
) -> Result<(DMatrix<f64>, Option<usize>)> {
    let result = match dbscan_cfg {
        Some(db) if cluster.rounds >= db.burn_in => {
            let since = cluster.rounds - db.burn_in;
            if cluster.labels.is_none() || since % db.period == 0 {
                let assignment = dbscan(particles, db.epsilon, db.min_neighbors);
                cluster.labels = Some(assignment.labels);
            }
            let labels = cluster.labels.clone().expect("labels set above");
            let means = means_by_label(particles, &labels);
            let clusters = means.ncols();
            let assignment = ClusterAssignment { labels, means };
            // Share only the smoothing force, whose evaluation costs
            // limit-state calls; the quadratic term's `+ x` stays
            // per-particle so each particle keeps its own confinement.
            let (mut grads, _) = shared_gradients(particles, &assignment, |x| {
                smoothing_force(x, evaluator, smoothing)
            })?;
            grads += particles;
            (grads, Some(clusters))
        }
        _ => (dense_gradients(particles, evaluator, smoothing)?, None),
    };
    cluster.rounds += 1;
    Ok(result)
}

/// Per-particle potential gradients, one limit-state gradient per column.
fn dense_gradients(
    particles: &DMatrix<f64>,
    evaluator: &Evaluator<'_>,
    smoothing: &SmoothingConfig,
) -> Result<DMatrix<f64>> {
    let (d, m) = particles.shape();
    let mut grads = DMatrix::zeros(d, m);
    for j in 0..m {
        let x = particles.column(j).into_owned();
        let g = potential_gradient(&x, evaluator, smoothing)?;
        grads.set_column(j, &g);
    }
    Ok(grads)
}

fn run_level_inner(
    mut ensemble: Ensemble,
    evaluator: &Evaluator<'_>,
    smoothing: &SmoothingConfig,
    cfg: &AldiConfig,
    rng: &mut impl Rng,
    cluster: &mut ClusterState,
) -> Result<(Ensemble, LevelDiagnostics)> {
    cfg.validate()?;
    if evaluator.dim() != ensemble.dim() {
        return Err(Error::DimensionMismatch(format!(
            "evaluator dimension {} does not match ensemble dimension {}",
            evaluator.dim(),
            ensemble.dim()
        )));
    }
    let (d, m) = ensemble.particles.shape();
    let mut diag = LevelDiagnostics {
        level: smoothing.level_shift(),
        gradient_rounds: 0,
        steps: 0,
        stopping_time: 0.0,
        stopped: false,
        clusters: None,
    };
    let mut state = CumulativeState::default();
    for _ in 0..cfg.k_max {
        let (grads, clusters) =
            gradient_round(&ensemble.particles, evaluator, smoothing, cfg.dbscan.as_ref(), cluster)?;
        diag.gradient_rounds += 1;
        if clusters.is_some() {
            diag.clusters = clusters;
        }
        let (next, stop) = stopping_update(state, &ensemble, &grads, cfg.eps_cumu, cfg.k_min);
        state = next;
        if stop {
            diag.stopped = true;
            break;
        }
        let dt = adaptive_dt(&ensemble, &grads, cfg.gamma, cfg.step_scale)?;
        let noise = DMatrix::from_fn(m + d, m, |_, _| rng.sample(StandardNormal));
        ensemble = aldi_step(&ensemble, &grads, cfg.gamma, dt, &noise)?;
        diag.steps += 1;
        diag.stopping_time += dt;
    }
    Ok((ensemble, diag))
}

/// Run ALDI at a single smoothing level until the stopping rule fires or the
/// iteration cap is reached.
pub fn run_level(
    ensemble: Ensemble,
    evaluator: &Evaluator<'_>,
    smoothing: &SmoothingConfig,
    cfg: &AldiConfig,
    rng: &mut impl Rng,
) -> Result<(Ensemble, RunDiagnostics)> {
    let before = evaluator.ledger().snapshot();
    let mut cluster = ClusterState::default();
    let (out, level) = run_level_inner(ensemble, evaluator, smoothing, cfg, rng, &mut cluster)?;
    let after = evaluator.ledger().snapshot();
    Ok((out, RunDiagnostics::collect(vec![level], before, after)))
}

/// Run a whole tempering schedule, threading the ensemble (and any
/// clustering state) through the levels. Each level overrides the base
/// smoothing shift, `gamma`, and stopping tolerance from the schedule.
pub fn run_schedule(
    ensemble: Ensemble,
    evaluator: &Evaluator<'_>,
    smoothing: &SmoothingConfig,
    schedule: &LevelSchedule,
    cfg: &AldiConfig,
    rng: &mut impl Rng,
) -> Result<(Ensemble, RunDiagnostics)> {
    schedule.validate()?;
    let before = evaluator.ledger().snapshot();
    let mut cluster = ClusterState::default();
    let mut levels = Vec::with_capacity(schedule.len());
    let mut current = ensemble;
    for j in 0..schedule.len() {
        let level_smoothing = smoothing.at_level(schedule.levels[j])?;
        let level_cfg = AldiConfig {
            gamma: schedule.gammas[j],
            eps_cumu: schedule.eps_cumus[j],
            ..cfg.clone()
        };
        let (next, diag) = run_level_inner(
            current,
            evaluator,
            &level_smoothing,
            &level_cfg,
            rng,
            &mut cluster,
        )?;
        current = next;
        levels.push(diag);
    }
    let after = evaluator.ledger().snapshot();
    Ok((current, RunDiagnostics::collect(levels, before, after)))
}

/// Step-size policy for plain ULA runs.
#[derive(Debug, Clone, Copy)]
pub enum StepSize {
    /// Constant step size.
    Fixed(f64),
    /// `step_scale / max_j |grad V(x_j)|`, recomputed every iteration.
    Adaptive {
        /// Numerator of the adaptive step size.
        step_scale: f64,
    },
}

/// Cumulative stopping rule parameters for ULA runs.
#[derive(Debug, Clone, Copy)]
pub struct StoppingRule {
    /// Relative tolerance on the cumulative average.
    pub eps_cumu: f64,
    /// Minimum iterations before the rule may fire.
    pub k_min: usize,
}

/// Tuning for a plain ULA run.
#[derive(Debug, Clone)]
pub struct UlaConfig {
    /// Iteration cap (exact run length when no stopping rule is set).
    pub max_steps: usize,
    /// Step-size policy.
    pub step: StepSize,
    /// Optional early stopping; `None` always runs `max_steps` steps.
    pub stopping: Option<StoppingRule>,
}

impl UlaConfig {
    /// Check invariants.
    pub fn validate(&self) -> Result<()> {
        match self.step {
            StepSize::Fixed(dt) => {
                if !(dt > 0.0) || !dt.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "fixed step size must be positive and finite, got {dt}"
                    )));
                }
            }
            StepSize::Adaptive { step_scale } => {
                if !(step_scale > 0.0) || !step_scale.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "step scale must be positive and finite, got {step_scale}"
                    )));
                }
            }
        }
        if let Some(rule) = &self.stopping {
            if !(rule.eps_cumu > 0.0 && rule.eps_cumu < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "stopping tolerance must lie in (0, 1), got {}",
                    rule.eps_cumu
                )));
            }
            if rule.k_min == 0 {
                return Err(Error::InvalidConfig(
                    "k_min must be at least 1".to_owned(),
                ));
            }
            if self.max_steps <= rule.k_min {
                return Err(Error::InvalidConfig(format!(
                    "max_steps ({}) must exceed k_min ({})",
                    self.max_steps, rule.k_min
                )));
            }
        }
        Ok(())
    }
}

/// Plain ULA run with per-particle gradients (no interaction, no sharing).
pub fn run_ula(
    ensemble: Ensemble,
    evaluator: &Evaluator<'_>,
    smoothing: &SmoothingConfig,
    cfg: &UlaConfig,
    rng: &mut impl Rng,
) -> Result<(Ensemble, RunDiagnostics)> {
    cfg.validate()?;
    if evaluator.dim() != ensemble.dim() {
        return Err(Error::DimensionMismatch(format!(
            "evaluator dimension {} does not match ensemble dimension {}",
            evaluator.dim(),
            ensemble.dim()
        )));
    }
    let before = evaluator.ledger().snapshot();
    let (d, m) = ensemble.particles.shape();
    let mut diag = LevelDiagnostics {
        level: smoothing.level_shift(),
        gradient_rounds: 0,
        steps: 0,
        stopping_time: 0.0,
        stopped: cfg.stopping.is_none(),
        clusters: None,
    };
    let mut state = CumulativeState::default();
    let mut current = ensemble;
    for _ in 0..cfg.max_steps {
        let grads = dense_gradients(&current.particles, evaluator, smoothing)?;
        diag.gradient_rounds += 1;
        if let Some(rule) = &cfg.stopping {
            let (next, stop) = stopping_update(state, &current, &grads, rule.eps_cumu, rule.k_min);
            state = next;
            if stop {
                diag.stopped = true;
                break;
            }
        }
        let dt = match cfg.step {
            StepSize::Fixed(dt) => dt,
            StepSize::Adaptive { step_scale } => adaptive_dt(&current, &grads, 1.0, step_scale)?,
        };
        let noise = DMatrix::from_fn(d, m, |_, _| rng.sample(StandardNormal));
        current = ula_step(&current, &grads, dt, &noise)?;
        diag.steps += 1;
        diag.stopping_time += dt;
    }
    let after = evaluator.ledger().snapshot();
    Ok((current, RunDiagnostics::collect(vec![diag], before, after)))
}
