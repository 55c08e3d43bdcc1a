//! Expectation-maximization fitting for von Mises-Fisher-Nakagami mixtures.
//!
//! The objective is the polar-coordinates log-likelihood
//! `sum_i log sum_k alpha_k naka(r_i; m_k, S_k) vmf(w_i; mu_k, kappa_k)`.
//! It differs from the Cartesian log-likelihood by the model-independent
//! Jacobian term `-(d-1) sum_i log r_i`, so responsibilities, the maximizer
//! and likelihood differences between fits of the same data (hence BIC
//! ranking) are identical under either convention.
//!
//! Each M-step solves its stationarity conditions to near machine precision
//! (safeguarded Newton for the concentration, bisection for the shape, and
//! the spread update is available in closed form), so every step exactly
//! maximizes the EM surrogate and the log-likelihood trace is non-decreasing
//! up to floating-point noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use statrs::function::gamma::digamma;

use super::{component_log_polar, log_bessel_i, VmfnParams, VmfnmModel, KAPPA_MAX};
use crate::{Error, Result};

/// A component whose responsibility is below this for every point is starved
/// and removed during the M-step.
const STARVATION: f64 = 1e-30;

/// Diagnostics from one EM run.
#[derive(Clone, Debug, Serialize)]
pub struct EmReport {
    /// Number of E-steps executed. The final E-step only evaluates the
    /// log-likelihood, so the returned model and `log_likelihood` agree.
    pub iterations: usize,
    /// Polar-coordinates log-likelihood of the returned model.
    pub log_likelihood: f64,
    /// Log-likelihood after every E-step, in order.
    pub trace: Vec<f64>,
    /// Components removed because no point gave them any responsibility.
    pub dropped_components: usize,
    /// Whether the relative improvement fell below the tolerance before the
    /// iteration cap.
    pub converged: bool,
}

/// Winner of a BIC component-count search.
#[derive(Clone, Debug, Serialize)]
pub struct KSelection {
    /// Component count of the winning model (after any starvation drops).
    pub k: usize,
    /// The winning fitted mixture.
    pub model: VmfnmModel,
    /// Fit diagnostics of the winner.
    pub report: EmReport,
    /// The winning (lowest) BIC value.
    pub bic: f64,
}

/// Fits an `n_components`-component mixture by expectation-maximization.
///
/// Initialization is hard spherical k-means on the point directions (skipped
/// for one component), followed by the same estimators as the M-step with
/// 0/1 responsibilities and uniform mixture weights. Iteration stops when
/// the relative log-likelihood improvement is at most `tol` or after
/// `max_iter` E-steps. Requires `1 <= n_components <= M` for `M` non-zero,
/// finite points (one per column).
pub fn fit_em<R: Rng + ?Sized>(
    points: &DMatrix<f64>,
    n_components: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut R,
) -> Result<(VmfnmModel, EmReport)> {
    let polar = Polar::new(points)?;
    if n_components == 0 || n_components > polar.len() {
        return Err(Error::InvalidConfig(format!(
            "component count must satisfy 1 <= K <= {} points, got {n_components}",
            polar.len()
        )));
    }
    let initial = initial_model(&polar, n_components, rng)?;
    fit_em_with(&polar, initial, max_iter, tol)
}

/// Fits by expectation-maximization from a caller-supplied starting model
/// (no random initialization); otherwise identical to [`fit_em`].
pub fn fit_em_from(
    initial: VmfnmModel,
    points: &DMatrix<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<(VmfnmModel, EmReport)> {
    if initial.dim() != points.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "model dimension {} but points have dimension {}",
            initial.dim(),
            points.nrows()
        )));
    }
    let polar = Polar::new(points)?;
    fit_em_with(&polar, initial, max_iter, tol)
}

/// Fits every candidate component count and keeps the lowest Bayesian
/// information criterion
///
/// ```text
/// BIC = -2 log L + [K (d + 3) + (K - 1)] log M
/// ```
///
/// counting, per component, the mean direction (`d`), concentration, shape
/// and spread, plus `K - 1` free mixture weights. `K` is the fitted
/// component count (after starvation drops) and `log L` the polar
/// log-likelihood. Candidates are deduplicated and fitted in ascending
/// order, and a strict comparison keeps the smallest count on ties.
pub fn select_k<R: Rng + ?Sized>(
    points: &DMatrix<f64>,
    candidates: &[usize],
    max_iter: usize,
    tol: f64,
    rng: &mut R,
) -> Result<KSelection> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig(
            "need at least one candidate component count".into(),
        ));
    }
    let mut counts: Vec<usize> = candidates.to_vec();
    counts.sort_unstable();
    counts.dedup();
    let d = points.nrows() as f64;
    let m_points = points.ncols() as f64;
    let mut best: Option<KSelection> = None;
    for &k in &counts {
        let (model, report) = fit_em(points, k, max_iter, tol, rng)?;
        let fitted = model.n_components() as f64;
        let n_params = fitted * (d + 3.0) + (fitted - 1.0);
        let bic = -2.0 * report.log_likelihood + n_params * m_points.ln();
        if best.as_ref().map_or(true, |b| bic < b.bic) {
            best = Some(KSelection {
                k: model.n_components(),
                model,
                report,
                bic,
            });
        }
    }
    Ok(best.expect("candidates checked non-empty"))
}

/// Points factored into radii, log-radii and unit directions (one column
/// per point), precomputed once per fit.
struct Polar {
    radius: Vec<f64>,
    log_radius: Vec<f64>,
    directions: DMatrix<f64>,
}

impl Polar {
    fn new(points: &DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InvalidConfig(
                "need a non-empty point matrix to fit".into(),
            ));
        }
        let m_points = points.ncols();
        let mut radius = Vec::with_capacity(m_points);
        let mut log_radius = Vec::with_capacity(m_points);
        let mut directions = DMatrix::zeros(points.nrows(), m_points);
        for j in 0..m_points {
            let column = points.column(j);
            let r = column.norm();
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Numerical {
                    context: "vmfnm polar factorization",
                    detail: format!("point {j} has norm {r}; need finite non-zero points"),
                });
            }
            directions.column_mut(j).copy_from(&(column / r));
            radius.push(r);
            log_radius.push(r.ln());
        }
        Ok(Self {
            radius,
            log_radius,
            directions,
        })
    }

    fn len(&self) -> usize {
        self.radius.len()
    }
}

/// EM main loop over a prepared polar factorization.
fn fit_em_with(
    polar: &Polar,
    mut model: VmfnmModel,
    max_iter: usize,
    tol: f64,
) -> Result<(VmfnmModel, EmReport)> {
    if max_iter == 0 {
        return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
    }
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be finite and non-negative, got {tol}"
        )));
    }
    let m_points = polar.len();
    let mut resp = DMatrix::zeros(m_points, model.n_components());
    let mut trace: Vec<f64> = Vec::new();
    let mut dropped = 0usize;
    let mut converged = false;
    for iter in 1..=max_iter {
        if resp.ncols() != model.n_components() {
            resp = DMatrix::zeros(m_points, model.n_components());
        }
        let log_likelihood = e_step(polar, &model, &mut resp);
        let previous = trace.last().copied();
        trace.push(log_likelihood);
        if let Some(previous) = previous {
            if (log_likelihood - previous).abs() <= tol * previous.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if iter == max_iter {
            // Skip the final M-step so the returned model is the one the
            // last E-step evaluated.
            break;
        }
        let (next, newly_dropped) = m_step(polar, &model, &resp)?;
        model = next;
        dropped += newly_dropped;
    }
    let report = EmReport {
        iterations: trace.len(),
        log_likelihood: *trace.last().expect("at least one E-step"),
        trace,
        dropped_components: dropped,
        converged,
    };
    Ok((model, report))
}

/// One E-step: fills `resp` with posterior component responsibilities and
/// returns the polar log-likelihood at the current parameters. Each row is
/// normalized through its own log-sum-exp shift.
fn e_step(polar: &Polar, model: &VmfnmModel, resp: &mut DMatrix<f64>) -> f64 {
    let m_points = polar.len();
    let k = model.n_components();
    for (c, (component, &weight)) in model
        .components()
        .iter()
        .zip(model.weights())
        .enumerate()
    {
        let log_weight = weight.ln(); // ln 0 = -inf silences the component
        let dots = polar.directions.tr_mul(component.mean_dir());
        for i in 0..m_points {
            resp[(i, c)] = log_weight
                + component_log_polar(component, polar.radius[i], polar.log_radius[i], dots[i]);
        }
    }
    let mut log_likelihood = 0.0;
    for i in 0..m_points {
        let mut row_max = f64::NEG_INFINITY;
        for c in 0..k {
            row_max = row_max.max(resp[(i, c)]);
        }
        let mut sum = 0.0;
        for c in 0..k {
            let e = (resp[(i, c)] - row_max).exp();
            resp[(i, c)] = e;
            sum += e;
        }
        for c in 0..k {
            resp[(i, c)] /= sum;
        }
        log_likelihood += row_max + sum.ln();
    }
    log_likelihood
}

/// One M-step: drops starved components, renormalizes the mixture weights
/// over the survivors, and re-estimates every surviving component.
fn m_step(
    polar: &Polar,
    model: &VmfnmModel,
    resp: &DMatrix<f64>,
) -> Result<(VmfnmModel, usize)> {
    let mut components = Vec::with_capacity(model.n_components());
    let mut masses = Vec::with_capacity(model.n_components());
    let mut dropped = 0usize;
    for (c, old) in model.components().iter().enumerate() {
        let column = resp.column(c).into_owned();
        if column.max() < STARVATION {
            dropped += 1;
            continue;
        }
        let mass = column.sum();
        components.push(estimate_component(polar, &column, mass, old.mean_dir())?);
        masses.push(mass);
    }
    if components.is_empty() {
        return Err(Error::FitFailed(
            "every mixture component lost all responsibility".into(),
        ));
    }
    let total: f64 = masses.iter().sum();
    let weights: Vec<f64> = masses.iter().map(|m| m / total).collect();
    Ok((VmfnmModel::new(components, weights)?, dropped))
}

/// Responsibility-weighted maximum-likelihood estimate of one component.
///
/// Direction: the normalized resultant `rho = sum_i resp_i w_i`, with the
/// concentration solving `A_d(kappa) = |rho| / mass`. Radius: the spread is
/// the weighted mean of `r^2` (its exact stationary point) and the shape
/// solves `log m - psi(m) = log S - <log r^2>`.
fn estimate_component(
    polar: &Polar,
    resp: &DVector<f64>,
    mass: f64,
    fallback_dir: &DVector<f64>,
) -> Result<VmfnParams> {
    let d = polar.directions.nrows();
    let resultant = &polar.directions * resp;
    let resultant_norm = resultant.norm();
    let (mean_dir, concentration) = if resultant_norm > 1e-300 {
        let r_bar = (resultant_norm / mass).min(1.0);
        (resultant / resultant_norm, solve_concentration(r_bar, d))
    } else {
        // The weighted directions cancel exactly; keep the previous mean
        // direction and flatten the component to uniform.
        (fallback_dir.clone(), 0.0)
    };
    let mut spread = 0.0;
    let mut mean_log_r2 = 0.0;
    for i in 0..polar.len() {
        spread += resp[i] * polar.radius[i] * polar.radius[i];
        mean_log_r2 += resp[i] * 2.0 * polar.log_radius[i];
    }
    spread = (spread / mass).max(1e-300);
    mean_log_r2 /= mass;
    let gap = (spread.ln() - mean_log_r2).max(0.0);
    VmfnParams::new(mean_dir, concentration, solve_shape(gap), spread)
}

/// Solves `A_d(kappa) = r_bar` for `kappa in [0, KAPPA_MAX]`, where
/// `A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa)` is the mean resultant
/// length of a von Mises-Fisher draw. Newton iteration seeded with the
/// classic ratio approximation `r(d - r^2)/(1 - r^2)`, safeguarded by
/// bisection on a maintained bracket; `A_d` is strictly increasing, so the
/// root is unique.
fn solve_concentration(r_bar: f64, d: usize) -> f64 {
    if r_bar <= 1e-12 {
        return 0.0;
    }
    if r_bar >= 1.0 - 1e-12 {
        return KAPPA_MAX;
    }
    let dd = d as f64;
    let nu = 0.5 * dd - 1.0;
    let mut kappa =
        (r_bar * (dd - r_bar * r_bar) / (1.0 - r_bar * r_bar)).clamp(1e-8, KAPPA_MAX);
    let (mut lo, mut hi) = (0.0_f64, KAPPA_MAX);
    for _ in 0..100 {
        let a = (log_bessel_i(nu + 1.0, kappa) - log_bessel_i(nu, kappa)).exp();
        let f = a - r_bar;
        if f.abs() <= 1e-12 {
            break;
        }
        if f > 0.0 {
            hi = kappa;
        } else {
            lo = kappa;
        }
        // dA/dkappa = 1 - A^2 - (d - 1) A / kappa.
        let slope = 1.0 - a * a - (dd - 1.0) * a / kappa;
        let newton = kappa - f / slope;
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - kappa).abs() <= 1e-13 * kappa.max(1.0) {
            kappa = next;
            break;
        }
        kappa = next;
    }
    kappa
}

/// Solves `log m - psi(m) = gap` for the Nakagami shape, clamped to
/// `[1/2, 1000]`. The left side strictly decreases from 1.27036 at
/// `m = 1/2` toward `1/(2m)`, so the root is unique when it lies inside
/// the interval; `gap` outside that range hits the matching clamp.
fn solve_shape(gap: f64) -> f64 {
    let objective = |m: f64| m.ln() - digamma(m) - gap;
    if objective(0.5) <= 0.0 {
        return 0.5;
    }
    if objective(1000.0) >= 0.0 {
        return 1000.0;
    }
    let (mut lo, mut hi) = (0.5_f64, 1000.0_f64);
    while hi - lo > 1e-12 * lo {
        let mid = 0.5 * (lo + hi);
        if objective(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Hard-label initialization: spherical k-means on the directions, then the
/// M-step estimators with 0/1 responsibilities and uniform mixture weights.
fn initial_model<R: Rng + ?Sized>(polar: &Polar, k: usize, rng: &mut R) -> Result<VmfnmModel> {
    let m_points = polar.len();
    let labels = if k == 1 {
        vec![0usize; m_points]
    } else {
        spherical_kmeans(&polar.directions, k, rng)
    };
    let fallback = polar.directions.column(0).into_owned();
    let mut components = Vec::with_capacity(k);
    for cluster in 0..k {
        let resp = DVector::from_fn(m_points, |i, _| {
            if labels[i] == cluster {
                1.0
            } else {
                0.0
            }
        });
        let mass = resp.sum();
        components.push(estimate_component(polar, &resp, mass, &fallback)?);
    }
    VmfnmModel::new(components, vec![1.0 / k as f64; k])
}

/// Hard spherical k-means on unit directions (cosine similarity), at most
/// 25 rounds. Clusters that empty out during the rounds are reseeded from a
/// random point; any still empty afterwards are filled from the largest
/// cluster (possible because there are at least `k` points), taking its
/// member least aligned with that cluster's resultant.
fn spherical_kmeans<R: Rng + ?Sized>(
    directions: &DMatrix<f64>,
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let (d, m_points) = (directions.nrows(), directions.ncols());
    let chosen = rand::seq::index::sample(rng, m_points, k);
    let mut centers: Vec<DVector<f64>> = chosen
        .iter()
        .map(|i| directions.column(i).into_owned())
        .collect();
    let mut labels = vec![0usize; m_points];
    for _ in 0..25 {
        let mut changed = false;
        for i in 0..m_points {
            let column = directions.column(i);
            let mut best = 0;
            let mut best_dot = f64::NEG_INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let dot = column.dot(center);
                if dot > best_dot {
                    best_dot = dot;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![DVector::<f64>::zeros(d); k];
        for (i, &label) in labels.iter().enumerate() {
            counts[label] += 1;
            sums[label] += directions.column(i);
        }
        for c in 0..k {
            if counts[c] == 0 {
                centers[c] = directions
                    .column(rng.random_range(0..m_points))
                    .into_owned();
                changed = true;
            } else {
                let norm = sums[c].norm();
                if norm > 1e-300 {
                    centers[c] = &sums[c] / norm;
                }
                // A perfectly cancelling cluster keeps its previous center.
            }
        }
        if !changed {
            break;
        }
    }
    loop {
        let mut counts = vec![0usize; k];
        for &label in &labels {
            counts[label] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            break;
        };
        let largest = (0..k).max_by_key(|&c| counts[c]).expect("k >= 1");
        let mut resultant = DVector::<f64>::zeros(d);
        for (i, &label) in labels.iter().enumerate() {
            if label == largest {
                resultant += directions.column(i);
            }
        }
        let mut mover = usize::MAX;
        let mut worst = f64::INFINITY;
        for (i, &label) in labels.iter().enumerate() {
            if label == largest {
                let dot = directions.column(i).dot(&resultant);
                if dot < worst {
                    worst = dot;
                    mover = i;
                }
            }
        }
        labels[mover] = empty;
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vmfnm::sample;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn unit(v: Vec<f64>) -> DVector<f64> {
        let v = DVector::from_vec(v);
        let n = v.norm();
        v / n
    }

    #[test]
    fn recovers_single_component_parameters_from_samples() {
        let mu = unit(vec![3.0, 1.0, -2.0, 0.5, 1.5, -1.0, 2.0, 0.0, 1.0, -0.5]);
        let truth =
            VmfnmModel::single(VmfnParams::new(mu.clone(), 50.0, 2.0, 4.0).unwrap());
        let mut rng = ChaCha12Rng::seed_from_u64(407);
        let points = sample(&truth, 10_000, &mut rng).unwrap();
        let (model, report) = fit_em(&points, 1, 100, 1e-10, &mut rng).unwrap();
        assert!(report.converged);
        let fitted = &model.components()[0];
        let alignment = fitted.mean_dir().dot(&mu);
        assert!(alignment >= 0.99, "direction off: dot = {alignment}");
        assert!(
            (fitted.concentration() - 50.0).abs() <= 5.0,
            "kappa = {}",
            fitted.concentration()
        );
        assert!((fitted.shape() - 2.0).abs() <= 0.2, "m = {}", fitted.shape());
        assert!(
            (fitted.spread() - 4.0).abs() <= 0.4,
            "S = {}",
            fitted.spread()
        );
    }

    #[test]
    fn collinear_rays_recover_the_direction_exactly() {
        // Radii whose squares and square roots are exact in binary, so the
        // polar factorization introduces no rounding at all: the fitted
        // mean direction must be bit-equal to the axis and the mean
        // resultant length exactly one, which clamps the concentration.
        let radii = [0.5, 1.0, 1.5, 2.0, 2.5, 3.25];
        let mut points = DMatrix::zeros(5, radii.len());
        for (j, &r) in radii.iter().enumerate() {
            points[(2, j)] = r;
        }
        let mut rng = ChaCha12Rng::seed_from_u64(408);
        let (model, _) = fit_em(&points, 1, 50, 1e-10, &mut rng).unwrap();
        let fitted = &model.components()[0];
        let expected = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(fitted.mean_dir(), &expected);
        assert_eq!(fitted.concentration(), KAPPA_MAX);
        assert!(fitted.shape() >= 0.5 && fitted.shape() <= 1000.0);
    }

    #[test]
    fn log_likelihood_trace_is_monotone_for_random_initializations() {
        let c1 =
            VmfnParams::new(unit(vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]), 30.0, 1.5, 1.0).unwrap();
        let c2 =
            VmfnParams::new(unit(vec![-1.0, 0.0, 1.0, 0.0, 0.0, 0.0]), 20.0, 3.0, 2.5).unwrap();
        let truth = VmfnmModel::new(vec![c1, c2], vec![0.45, 0.55]).unwrap();
        let mut sampler_rng = ChaCha12Rng::seed_from_u64(409);
        let points = sample(&truth, 500, &mut sampler_rng).unwrap();
        for trial in 0..20u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(500 + trial);
            let (_, report) = fit_em(&points, 2, 60, 1e-12, &mut rng).unwrap();
            assert_eq!(
                report.dropped_components, 0,
                "trial {trial} dropped a component"
            );
            for window in report.trace.windows(2) {
                let floor = window[0] - 1e-8 * window[0].abs().max(1.0);
                assert!(
                    window[1] >= floor,
                    "trial {trial}: log-likelihood fell from {} to {}",
                    window[0],
                    window[1]
                );
            }
        }
    }

    #[test]
    fn refitting_from_the_generating_model_barely_moves_it() {
        // With the generating parameters as the starting point, one exact
        // M-step lands on the sample MLE, which concentrates around the
        // truth; all parameters stay within 2%.
        let mu = unit(vec![1.0, -1.0, 0.5, 2.0, 0.0, -0.5, 1.5, 1.0]);
        let truth =
            VmfnmModel::single(VmfnParams::new(mu.clone(), 30.0, 2.0, 4.0).unwrap());
        let mut rng = ChaCha12Rng::seed_from_u64(410);
        let points = sample(&truth, 100_000, &mut rng).unwrap();
        let (model, _) = fit_em_from(truth.clone(), &points, 2, 1e-12).unwrap();
        let fitted = &model.components()[0];
        assert!(fitted.mean_dir().dot(&mu) >= 0.9999);
        assert!(
            (fitted.concentration() - 30.0).abs() / 30.0 <= 0.02,
            "kappa moved to {}",
            fitted.concentration()
        );
        assert!(
            (fitted.shape() - 2.0).abs() / 2.0 <= 0.02,
            "m moved to {}",
            fitted.shape()
        );
        assert!(
            (fitted.spread() - 4.0).abs() / 4.0 <= 0.02,
            "S moved to {}",
            fitted.spread()
        );
    }

    #[test]
    fn responsibilities_sum_to_one_for_every_point() {
        let c1 = VmfnParams::new(unit(vec![1.0, 0.0, 0.0, 1.0]), 8.0, 1.0, 1.0).unwrap();
        let c2 = VmfnParams::new(unit(vec![0.0, 1.0, -1.0, 0.0]), 3.0, 2.0, 2.0).unwrap();
        let c3 = VmfnParams::new(unit(vec![-1.0, 1.0, 0.0, 0.5]), 15.0, 0.75, 0.5).unwrap();
        let model = VmfnmModel::new(vec![c1, c2, c3], vec![0.25, 0.35, 0.4]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(411);
        let points = sample(&model, 50, &mut rng).unwrap();
        let polar = Polar::new(&points).unwrap();
        let mut resp = DMatrix::zeros(50, 3);
        let log_likelihood = e_step(&polar, &model, &mut resp);
        assert!(log_likelihood.is_finite());
        for i in 0..50 {
            let sum: f64 = (0..3).map(|c| resp[(i, c)]).sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn starved_component_is_dropped_and_weights_renormalized() {
        // All data sit near +e1; a component pinned to -e1 with maximal
        // concentration scores exp(-~2e6) on every point, far below the
        // starvation threshold, and must vanish in the first M-step.
        let anchor = unit(vec![1.0, 0.0, 0.0, 0.0]);
        let data_model =
            VmfnmModel::single(VmfnParams::new(anchor.clone(), 100.0, 2.0, 1.0).unwrap());
        let mut rng = ChaCha12Rng::seed_from_u64(412);
        let points = sample(&data_model, 200, &mut rng).unwrap();
        let live = VmfnParams::new(anchor.clone(), 50.0, 1.0, 1.0).unwrap();
        let dead =
            VmfnParams::new(unit(vec![-1.0, 0.0, 0.0, 0.0]), KAPPA_MAX, 1.0, 1.0).unwrap();
        let start = VmfnmModel::new(vec![live, dead], vec![0.5, 0.5]).unwrap();
        let (model, report) = fit_em_from(start, &points, 10, 1e-9).unwrap();
        assert_eq!(model.n_components(), 1);
        assert_eq!(model.weights(), &[1.0]);
        assert_eq!(report.dropped_components, 1);
        assert!(model.components()[0].mean_dir().dot(&anchor) > 0.99);
    }

    #[test]
    fn selection_prefers_one_component_for_unimodal_data() {
        let mu = unit(vec![1.0, 2.0, -1.0, 0.5, 0.0, 1.0]);
        let truth = VmfnmModel::single(VmfnParams::new(mu, 20.0, 2.0, 3.0).unwrap());
        let mut chose_one = 0;
        for trial in 0..100u64 {
            let mut rng = ChaCha12Rng::seed_from_u64(3000 + trial);
            let points = sample(&truth, 200, &mut rng).unwrap();
            let selection = select_k(&points, &[1, 2, 3], 50, 1e-8, &mut rng).unwrap();
            if selection.k == 1 {
                chose_one += 1;
            }
        }
        assert!(
            chose_one >= 95,
            "one component chosen in only {chose_one}/100 trials"
        );
    }

    #[test]
    fn selection_separates_antipodal_clusters() {
        let plus = unit(vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let minus = unit(vec![-1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        let c1 = VmfnParams::new(plus, 60.0, 3.0, 2.0).unwrap();
        let c2 = VmfnParams::new(minus, 60.0, 3.0, 4.0).unwrap();
        let truth = VmfnmModel::new(vec![c1, c2], vec![0.5, 0.5]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(413);
        let points = sample(&truth, 300, &mut rng).unwrap();
        let selection = select_k(&points, &[1, 2, 3], 60, 1e-9, &mut rng).unwrap();
        assert_eq!(selection.k, 2);
        assert!(selection.bic.is_finite());
    }

    #[test]
    fn selection_with_one_candidate_returns_that_fit() {
        let plus = unit(vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let minus = unit(vec![-1.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        let c1 = VmfnParams::new(plus, 60.0, 3.0, 2.0).unwrap();
        let c2 = VmfnParams::new(minus, 60.0, 3.0, 4.0).unwrap();
        let truth = VmfnmModel::new(vec![c1, c2], vec![0.5, 0.5]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(417);
        let points = sample(&truth, 300, &mut rng).unwrap();
        let selection = select_k(&points, &[3], 60, 1e-9, &mut rng).unwrap();
        assert_eq!(selection.k, 3);
        assert_eq!(selection.k, selection.model.n_components());
    }

    #[test]
    fn selection_is_insensitive_to_candidate_order_and_duplicates() {
        let mu = unit(vec![0.5, 1.0, 1.5, -0.5, 0.0, 2.0]);
        let truth = VmfnmModel::single(VmfnParams::new(mu, 20.0, 2.0, 3.0).unwrap());
        let mut rng = ChaCha12Rng::seed_from_u64(414);
        let points = sample(&truth, 150, &mut rng).unwrap();
        let mut rng_a = ChaCha12Rng::seed_from_u64(415);
        let mut rng_b = ChaCha12Rng::seed_from_u64(415);
        let a = select_k(&points, &[1, 2, 3], 50, 1e-8, &mut rng_a).unwrap();
        let b = select_k(&points, &[3, 1, 3, 2], 50, 1e-8, &mut rng_b).unwrap();
        assert_eq!(a.k, b.k);
        // Identical seeds and identical post-dedup fit order: bit-equal BIC.
        assert_eq!(a.bic, b.bic);
    }

    #[test]
    fn concentration_solver_inverts_the_mean_resultant_function() {
        for &d in &[2usize, 3, 10, 100] {
            let nu = 0.5 * d as f64 - 1.0;
            for &kappa in &[0.1, 1.0, 10.0, 100.0, 1e4] {
                let r_bar = (log_bessel_i(nu + 1.0, kappa) - log_bessel_i(nu, kappa)).exp();
                let solved = solve_concentration(r_bar, d);
                assert!(
                    ((solved - kappa) / kappa).abs() <= 1e-6,
                    "d = {d}, kappa = {kappa}: solved {solved}"
                );
            }
        }
        assert_eq!(solve_concentration(0.0, 5), 0.0);
        assert_eq!(solve_concentration(1.0, 5), KAPPA_MAX);
    }

    #[test]
    fn shape_solver_inverts_the_log_moment_gap() {
        for &m in &[0.6_f64, 1.0, 2.5, 10.0, 400.0] {
            let gap = m.ln() - digamma(m);
            let solved = solve_shape(gap);
            assert!(
                ((solved - m) / m).abs() <= 1e-9,
                "m = {m}: solved {solved}"
            );
        }
        // Gaps beyond either end of the solvable range hit the clamps.
        assert_eq!(solve_shape(5.0), 0.5);
        assert_eq!(solve_shape(0.0), 1000.0);
    }

    #[test]
    fn fitting_rejects_invalid_inputs() {
        let mut rng = ChaCha12Rng::seed_from_u64(416);
        let good = DMatrix::from_fn(3, 10, |i, j| 1.0 + (i + j) as f64);
        assert!(fit_em(&good, 0, 10, 1e-8, &mut rng).is_err());
        assert!(fit_em(&good, 11, 10, 1e-8, &mut rng).is_err());
        assert!(fit_em(&good, 2, 0, 1e-8, &mut rng).is_err());
        let mut with_origin = good.clone();
        with_origin.column_mut(4).fill(0.0);
        assert!(fit_em(&with_origin, 2, 10, 1e-8, &mut rng).is_err());
        let two_dim = VmfnmModel::single(
            VmfnParams::new(unit(vec![1.0, 1.0]), 1.0, 1.0, 1.0).unwrap(),
        );
        assert!(fit_em_from(two_dim, &good, 10, 1e-8).is_err());
        assert!(select_k(&good, &[], 10, 1e-8, &mut rng).is_err());
    }
}
