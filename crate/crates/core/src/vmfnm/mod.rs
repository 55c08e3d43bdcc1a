//! Von Mises-Fisher-Nakagami mixtures.
//!
//! In polar coordinates `x = r w` (`r = |x| > 0`, `w = x/|x|` on the unit
//! sphere) each component factors into a Nakagami radial density
//!
//! ```text
//! naka(r; m, S)   = 2 m^m / (Gamma(m) S^m) * r^(2m-1) * exp(-(m/S) r^2)
//! ```
//!
//! and a von Mises-Fisher directional density
//!
//! ```text
//! vmf(w; mu, kappa) = kappa^(d/2-1) / ((2 pi)^(d/2) I_{d/2-1}(kappa))
//!                     * exp(kappa mu . w)
//! ```
//!
//! with `I` the modified Bessel function of the first kind. A `K`-component
//! mixture attaches weights `alpha_k` summing to one. Importance-sampling
//! weights need the density with respect to Lebesgue measure on R^d, so
//! [`log_pdf`] subtracts the polar Jacobian `(d-1) log r` from the polar-form
//! mixture density.
//!
//! The module provides log-space density evaluation ([`log_nakagami_pdf`],
//! [`log_vmf_pdf`], [`log_pdf`]), exact sampling ([`sample`]), maximum
//! likelihood fitting by expectation-maximization ([`fit_em`],
//! [`fit_em_from`]) and component-count selection by the Bayesian
//! information criterion ([`select_k`]).

mod bessel;
mod em;

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

pub use bessel::log_bessel_i;
pub use em::{fit_em, fit_em_from, select_k, EmReport, KSelection};

use crate::{Error, Result};

/// Largest concentration a fit will produce; also the sanity cap for inputs.
pub const KAPPA_MAX: f64 = 1e6;

/// Parameters of one von Mises-Fisher-Nakagami component.
///
/// `mean_dir` is a unit vector, `concentration >= 0` controls the angular
/// spread around it, and the Nakagami pair (`shape >= 1/2`, `spread > 0`)
/// controls the radius: `E[r^2] = spread` exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VmfnParams {
    mean_dir: DVector<f64>,
    concentration: f64,
    shape: f64,
    spread: f64,
}

impl VmfnParams {
    /// Validates the component invariants: `|mean_dir| = 1` to 1e-10,
    /// `0 <= concentration`, `shape >= 1/2`, `spread > 0`, all finite.
    pub fn new(
        mean_dir: DVector<f64>,
        concentration: f64,
        shape: f64,
        spread: f64,
    ) -> Result<Self> {
        if mean_dir.is_empty() || mean_dir.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "mean direction must be a non-empty finite vector".into(),
            ));
        }
        if (mean_dir.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidConfig(format!(
                "mean direction must be a unit vector, |mu| = {}",
                mean_dir.norm()
            )));
        }
        if !(concentration >= 0.0 && concentration.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "concentration must be finite and >= 0, got {concentration}"
            )));
        }
        if !(shape >= 0.5 && shape.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "shape must be finite and >= 1/2, got {shape}"
            )));
        }
        if !(spread > 0.0 && spread.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "spread must be finite and positive, got {spread}"
            )));
        }
        Ok(Self {
            mean_dir,
            concentration,
            shape,
            spread,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean_dir.len()
    }

    pub fn mean_dir(&self) -> &DVector<f64> {
        &self.mean_dir
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn spread(&self) -> f64 {
        self.spread
    }
}

/// A weighted mixture of [`VmfnParams`] components.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VmfnmModel {
    components: Vec<VmfnParams>,
    weights: Vec<f64>,
}

impl VmfnmModel {
    /// Validates: components non-empty with equal dimensions, weights
    /// non-negative and summing to 1 within 1e-12.
    pub fn new(components: Vec<VmfnParams>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidConfig("mixture needs components".into()));
        }
        if components.len() != weights.len() {
            return Err(Error::InvalidConfig(format!(
                "{} components but {} weights",
                components.len(),
                weights.len()
            )));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::InvalidConfig(
                "mixture components must share one dimension".into(),
            ));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig(
                "mixture weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "mixture weights must sum to 1, got {total}"
            )));
        }
        Ok(Self {
            components,
            weights,
        })
    }

    /// A one-component mixture.
    pub fn single(component: VmfnParams) -> Self {
        Self {
            components: vec![component],
            weights: vec![1.0],
        }
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[VmfnParams] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Log-density of the Nakagami radial distribution at `r > 0`.
pub fn log_nakagami_pdf(r: f64, shape: f64, spread: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Numerical {
            context: "log_nakagami_pdf",
            detail: format!("radius must be positive and finite, got {r}"),
        });
    }
    if !(shape >= 0.5 && shape.is_finite() && spread > 0.0 && spread.is_finite()) {
        return Err(Error::Numerical {
            context: "log_nakagami_pdf",
            detail: format!("invalid parameters shape = {shape}, spread = {spread}"),
        });
    }
    Ok(log_nakagami_constant(shape, spread) + log_nakagami_variable(r, r.ln(), shape, spread))
}

/// Log-density of the von Mises-Fisher distribution on the unit sphere.
///
/// `kappa = 0` is the uniform distribution `Gamma(d/2) / (2 pi^(d/2))`.
pub fn log_vmf_pdf(
    direction: &DVector<f64>,
    mean_dir: &DVector<f64>,
    concentration: f64,
) -> Result<f64> {
    if direction.len() != mean_dir.len() {
        return Err(Error::DimensionMismatch(format!(
            "direction has dimension {}, mean direction {}",
            direction.len(),
            mean_dir.len()
        )));
    }
    for (name, v) in [("direction", direction), ("mean direction", mean_dir)] {
        if (v.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::Numerical {
                context: "log_vmf_pdf",
                detail: format!("{name} must be a unit vector, norm = {}", v.norm()),
            });
        }
    }
    if !(concentration >= 0.0 && concentration.is_finite()) {
        return Err(Error::Numerical {
            context: "log_vmf_pdf",
            detail: format!("concentration must be finite and >= 0, got {concentration}"),
        });
    }
    let d = direction.len();
    Ok(log_vmf_constant(d, concentration) + concentration * direction.dot(mean_dir))
}

/// Cartesian log-density of the mixture at `x != 0`: the polar mixture
/// density times the Jacobian `r^-(d-1)`, evaluated fully in log space.
pub fn log_pdf(x: &DVector<f64>, model: &VmfnmModel) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "point has dimension {}, model {}",
            x.len(),
            model.dim()
        )));
    }
    let r = x.norm();
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Numerical {
            context: "vmfnm log_pdf",
            detail: format!("point must be non-zero and finite, |x| = {r}"),
        });
    }
    let d = x.len() as f64;
    let log_r = r.ln();
    let mut terms = Vec::with_capacity(model.n_components());
    for (component, &weight) in model.components.iter().zip(&model.weights) {
        if weight == 0.0 {
            continue; // a zero weight contributes exp(-inf) = 0
        }
        let dot = x.dot(&component.mean_dir) / r;
        terms.push(weight.ln() + component_log_polar(component, r, log_r, dot));
    }
    Ok(log_sum_exp(&terms) - (d - 1.0) * log_r)
}

/// Draw `n >= 1` samples, one per column.
///
/// Per sample: component by the mixture weights, radius from
/// `r^2 ~ Gamma(shape = m, scale = S/m)`, direction from the von
/// Mises-Fisher distribution by Wood's rejection construction.
pub fn sample<R: Rng + ?Sized>(
    model: &VmfnmModel,
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one sample".into()));
    }
    let d = model.dim();
    let radial: Vec<Gamma<f64>> = model
        .components
        .iter()
        .map(|c| {
            Gamma::new(c.shape, c.spread / c.shape).map_err(|e| Error::Numerical {
                context: "vmfnm sample",
                detail: format!("invalid radial distribution: {e}"),
            })
        })
        .collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(d, n);
    for j in 0..n {
        let k = pick_component(&model.weights, rng);
        let component = &model.components[k];
        let r = radial[k].sample(rng).sqrt();
        let omega = sample_vmf(&component.mean_dir, component.concentration, rng);
        out.column_mut(j).copy_from(&(omega * r));
    }
    Ok(out)
}

/// Index drawn from the mixture weights.
fn pick_component<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// One draw from the von Mises-Fisher distribution around `mean_dir`.
fn sample_vmf<R: Rng + ?Sized>(mean_dir: &DVector<f64>, kappa: f64, rng: &mut R) -> DVector<f64> {
    let d = mean_dir.len();
    if d == 1 {
        // The 0-sphere has two points; P(w = mu) = e^kappa / (2 cosh kappa).
        let p_aligned = 1.0 / (1.0 + (-2.0 * kappa).exp());
        let sign = if rng.random::<f64>() < p_aligned { 1.0 } else { -1.0 };
        return mean_dir * sign;
    }
    if kappa == 0.0 {
        return random_unit_vector(d, rng);
    }
    // Wood's rejection sampler for the cosine w = mu . omega, written with
    // the cancellation-free forms of 1 - x0^2 and 1 - x0 w.
    let a = (d - 1) as f64;
    let b = a / ((4.0 * kappa * kappa + a * a).sqrt() + 2.0 * kappa);
    let x0 = (1.0 - b) / (1.0 + b);
    let envelope = Beta::new(0.5 * a, 0.5 * a).expect("valid Beta parameters");
    let c = kappa * x0 + a * ((4.0 * b).ln() - 2.0 * (1.0 + b).ln());
    let w = loop {
        let z: f64 = envelope.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let log_accept =
            kappa * w + a * ((1.0 + b - (1.0 - b) * w).ln() - (1.0 + b).ln()) - c;
        if log_accept >= rng.random::<f64>().ln() {
            break w;
        }
    };
    // Uniform tangent direction orthogonal to mu.
    let tangent = loop {
        let mut v = random_unit_vector(d, rng);
        let along = v.dot(mean_dir);
        v.axpy(-along, mean_dir, 1.0);
        let norm = v.norm();
        if norm > 1e-12 {
            break v / norm;
        }
    };
    mean_dir * w + tangent * (1.0 - w * w).max(0.0).sqrt()
}

/// Uniform draw on the unit sphere (normalized standard normal vector).
fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Polar-coordinates log-density of one component (no mixture weight, no
/// Jacobian): `log naka(r) + log vmf(w)` with `dot = mu . w`.
fn component_log_polar(component: &VmfnParams, r: f64, log_r: f64, dot: f64) -> f64 {
    log_nakagami_constant(component.shape, component.spread)
        + log_nakagami_variable(r, log_r, component.shape, component.spread)
        + log_vmf_constant(component.dim(), component.concentration)
        + component.concentration * dot
}

/// `log(2 m^m / (Gamma(m) S^m))`.
fn log_nakagami_constant(shape: f64, spread: f64) -> f64 {
    LN_2 + shape * (shape.ln() - spread.ln()) - ln_gamma(shape)
}

/// `(2m - 1) log r - (m/S) r^2`.
fn log_nakagami_variable(r: f64, log_r: f64, shape: f64, spread: f64) -> f64 {
    (2.0 * shape - 1.0) * log_r - (shape / spread) * r * r
}

/// Log-normalizer of the von Mises-Fisher density (everything except the
/// `kappa mu . w` term). `kappa = 0` reduces to the uniform density on the
/// sphere, `Gamma(d/2) / (2 pi^(d/2))`.
fn log_vmf_constant(d: usize, kappa: f64) -> f64 {
    let d = d as f64;
    if kappa == 0.0 {
        ln_gamma(0.5 * d) - LN_2 - 0.5 * d * PI.ln()
    } else {
        let nu = 0.5 * d - 1.0;
        nu * kappa.ln() - 0.5 * d * (2.0 * PI).ln() - log_bessel_i(nu, kappa)
    }
}

/// `log sum_i exp(t_i)`, tolerant of `-inf` entries; `-inf` for an empty set.
fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + sum.ln()
}
