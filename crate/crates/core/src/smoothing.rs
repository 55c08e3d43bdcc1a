//! Smooth failure indicator and the rare-event potential.
//!
//! The hard indicator `1{g(x) <= 0}` is replaced by the logistic
//! approximation
//!
//! `F_sigma(x) = 1 / (1 + exp((-mu + g(x) - q) / sigma))`,
//!
//! parameterised by a smoothing width `sigma > 0`, a positive shift `mu`
//! keeping the smoothed density's mass on the failure side, and a level
//! shift `q` used by the sequential tempering schedule. The associated
//! rare-event potential
//!
//! `V_sigma(x) = -log F_sigma(x) + |x|^2 / 2`
//!
//! is the target energy of the Langevin samplers: `exp(-V_sigma)` is
//! proportional to the smoothed optimal importance-sampling density.
//!
//! Everything here is computed with branch-stable `sigmoid`/`softplus`
//! primitives because experiment sweeps drive `sigma` down to `1e-11`,
//! where naive exponentials overflow instantly.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::lsf::Evaluator;

/// Numerically stable logistic function.
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log(1 + exp(t))`; exactly linear for large `t`.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Smoothing parameters `(sigma, mu)` plus the current level shift `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    sigma: f64,
    mu: f64,
    q: f64,
}

impl SmoothingConfig {
    /// Explicit `(sigma, mu)` pair, level shift `q = 0`.
    pub fn new(sigma: f64, mu: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "smoothing sigma must be positive and finite, got {sigma}"
            )));
        }
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "smoothing mu must be positive and finite, got {mu}"
            )));
        }
        Ok(Self { sigma, mu, q: 0.0 })
    }

    /// Reduced parametrisation: `sigma = sqrt(3) sigma_r / pi` and
    /// `mu = ln(9) * (3 sigma_r / pi)^{1/2}`, so that `mu` scales like
    /// `sqrt(sigma)` and stays positive.
    pub fn from_sigma_r(sigma_r: f64) -> Result<Self> {
        if !(sigma_r > 0.0) || !sigma_r.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "reduced smoothing parameter must be positive and finite, got {sigma_r}"
            )));
        }
        let pi = std::f64::consts::PI;
        let sigma = 3.0_f64.sqrt() * sigma_r / pi;
        let mu = 9.0_f64.ln() * (3.0 * sigma_r / pi).sqrt();
        Self::new(sigma, mu)
    }

    /// Copy of this config with the level shift set to `q >= 0`.
    pub fn at_level(self, q: f64) -> Result<Self> {
        if !(q >= 0.0) || !q.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "level shift must be nonnegative and finite, got {q}"
            )));
        }
        Ok(Self { q, ..self })
    }

    /// Smoothing width `sigma`.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Indicator shift `mu`.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Current level shift `q`.
    pub fn level_shift(&self) -> f64 {
        self.q
    }
}

/// Smooth indicator `F_sigma` as a function of the LSF value.
///
/// Strictly inside `(0, 1)` analytically; saturates to exactly `0.0` or
/// `1.0` in floating point without ever producing a NaN or infinity.
pub fn smooth_indicator(g_val: f64, cfg: &SmoothingConfig) -> f64 {
    sigmoid((cfg.mu - (g_val - cfg.q)) / cfg.sigma)
}

/// `log F_sigma`, finite for every finite input (linear saturation instead
/// of `-inf` when the indicator underflows).
pub fn log_smooth_indicator(g_val: f64, cfg: &SmoothingConfig) -> f64 {
    -softplus((g_val - cfg.q - cfg.mu) / cfg.sigma)
}

/// Rare-event potential `V_sigma(x) = -log F_sigma(x) + |x|^2 / 2`.
///
/// Costs exactly one LSF call on the evaluator's ledger.
pub fn potential(x: &DVector<f64>, evaluator: &Evaluator<'_>, cfg: &SmoothingConfig) -> f64 {
    let g = evaluator.value(x);
    -log_smooth_indicator(g, cfg) + 0.5 * x.norm_squared()
}

/// Gradient of the smoothing term `-log F_sigma` alone,
///
/// `(grad g(x) / sigma) * (1 - F_sigma(x))`,
///
/// with the complement `1 - F_sigma` evaluated directly as a sigmoid so it
/// never suffers `1 - 1` cancellation. This is the part of the potential
/// gradient whose evaluation costs limit-state calls (one call plus one
/// gradient in analytic mode, or `d` central-difference pairs in FD mode);
/// the remaining quadratic term contributes the free per-point `+ x`.
pub fn smoothing_force(
    x: &DVector<f64>,
    evaluator: &Evaluator<'_>,
    cfg: &SmoothingConfig,
) -> Result<DVector<f64>> {
    let (g, grad) = evaluator.value_and_grad(x)?;
    let complement = sigmoid((g - cfg.q - cfg.mu) / cfg.sigma);
    Ok(grad * (complement / cfg.sigma))
}

/// Analytic gradient of the rare-event potential,
///
/// `grad V_sigma(x) = (grad g(x) / sigma) * (1 - F_sigma(x)) + x`.
///
/// Costs are those of [`smoothing_force`].
pub fn potential_gradient(
    x: &DVector<f64>,
    evaluator: &Evaluator<'_>,
    cfg: &SmoothingConfig,
) -> Result<DVector<f64>> {
    Ok(smoothing_force(x, evaluator, cfg)? + x)
}

/// Extreme eigenvalues of the potential's Hessian,
///
/// `Hess V_sigma = (1-F)F/sigma^2 * grad g grad g^T + (1-F)/sigma * Hess g + I`,
///
/// for limit states exposing an analytic Hessian. Used as a convexity
/// diagnostic; when `Hess g = 0` the spectrum is known in closed form from
/// the rank-one structure, otherwise the assembled matrix is passed to a
/// dense symmetric eigensolver.
pub fn hessian_spectral_bounds(
    x: &DVector<f64>,
    evaluator: &Evaluator<'_>,
    cfg: &SmoothingConfig,
) -> Result<(f64, f64)> {
    let (g, grad) = evaluator.value_and_grad(x)?;
    let hess_g = evaluator.lsf().hessian(x).ok_or_else(|| {
        Error::InvalidConfig("spectral bounds need an LSF with an analytic Hessian".into())
    })?;
    let complement = sigmoid((g - cfg.q - cfg.mu) / cfg.sigma);
    let indicator = smooth_indicator(g, cfg);
    let rank_one = complement * indicator / (cfg.sigma * cfg.sigma);
    let curvature = complement / cfg.sigma;

    if hess_g.iter().all(|&v| v == 0.0) {
        // I + rank_one * grad grad^T: eigenvalue 1 with multiplicity d-1 and
        // 1 + rank_one * |grad|^2 along the gradient direction.
        let top = 1.0 + rank_one * grad.norm_squared();
        if x.len() == 1 {
            return Ok((top, top));
        }
        return Ok((top.min(1.0), top.max(1.0)));
    }

    let d = x.len();
    let mut hess = hess_g * curvature;
    hess += &grad * grad.transpose() * rank_one;
    for i in 0..d {
        hess[(i, i)] += 1.0;
    }
    let eigen = hess.symmetric_eigen();
    let min = eigen.eigenvalues.min();
    let max = eigen.eigenvalues.max();
    Ok((min, max))
}
