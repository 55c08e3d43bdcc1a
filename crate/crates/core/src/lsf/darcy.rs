//! One-dimensional Darcy flow with a log-normal conductivity field.
//!
//! The hydraulic head `u` on `[0, 1]` solves `(kappa u')' = -J` with a
//! Dirichlet condition `u(1) = 1` and a prescribed inlet slope
//! `u'(0) = -(sqrt(0.5) x_1 - 2)`. The log-conductivity is a truncated
//! Karhunen-Loeve expansion of an exponential-kernel Gaussian field,
//!
//! `log kappa(y, x) = 1 + sqrt(0.3) * sum_m sqrt(lambda_m) phi_m(y) x_{m+1}`,
//!
//! and the source `J` superposes four Gaussian injection wells centred at
//! `0.2, 0.4, 0.6, 0.8` with width `0.05` and weight `0.8` each. Failure is
//! an excessive head: `g(x) = 2.7 - max_y u(y)`.
//!
//! The solver is a P1 finite-element scheme on a uniform mesh with
//! harmonic-mean element conductivities and a Thomas tridiagonal solve,
//! second-order accurate in the mesh width.

use nalgebra::DVector;

use super::kl::kl_eigenpairs;
use super::{Lsf, LsfEvaluation};
use crate::error::{Error, Result};

/// Head level whose exceedance defines failure.
const HEAD_THRESHOLD: f64 = 2.7;

/// Geometry and discretisation of the Darcy test problem.
#[derive(Debug, Clone)]
pub struct DarcyConfig {
    /// Input dimension: one inlet-slope variable plus `d - 1` field modes.
    pub d: usize,
    /// Number of uniform mesh elements.
    pub segments: usize,
    /// Correlation length of the log-conductivity field.
    pub corr_length: f64,
}

impl Default for DarcyConfig {
    fn default() -> Self {
        Self {
            d: 101,
            segments: 500,
            corr_length: 0.1,
        }
    }
}

/// Darcy-flow limit state `g(x) = 2.7 - max_y u(y; x)`.
pub struct DarcyLsf {
    config: DarcyConfig,
    /// `coeff[node * modes + m] = sqrt(0.3 * lambda_m) * phi_m(y_node)`.
    coeff: Vec<f64>,
    /// Source term at the mesh nodes.
    source: Vec<f64>,
    /// Mesh width.
    h: f64,
}

/// Superposition of four Gaussian injection wells.
fn source_term(y: f64) -> f64 {
    let sd = 0.05_f64;
    let norm = 0.8 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    (1..=4)
        .map(|i| {
            let z = (y - 0.2 * i as f64) / sd;
            norm * (-0.5 * z * z).exp()
        })
        .sum()
}

impl DarcyLsf {
    /// Pilot reference estimate of the failure probability, used for error
    /// reporting in the benchmark harness.
    pub const REFERENCE_PROBABILITY: f64 = 7.78e-6;

    /// Build the solver, precomputing the KL basis on the mesh.
    pub fn new(config: DarcyConfig) -> Result<Self> {
        if config.d < 2 {
            return Err(Error::InvalidConfig(format!(
                "darcy needs d >= 2 (slope variable plus at least one field mode), got {}",
                config.d
            )));
        }
        if config.segments < 2 {
            return Err(Error::InvalidConfig(format!(
                "darcy needs at least 2 mesh segments, got {}",
                config.segments
            )));
        }
        let modes = config.d - 1;
        let basis = kl_eigenpairs(modes, config.corr_length)?;
        let n = config.segments;
        let h = 1.0 / n as f64;
        let mut coeff = vec![0.0; (n + 1) * modes];
        for j in 0..=n {
            let y = j as f64 * h;
            for m in 0..modes {
                coeff[j * modes + m] = (0.3 * basis.lambda(m)).sqrt() * basis.phi(m, y);
            }
        }
        let source = (0..=n).map(|j| source_term(j as f64 * h)).collect();
        Ok(Self {
            config,
            coeff,
            source,
            h,
        })
    }

    /// Head level whose exceedance defines failure.
    pub fn head_threshold(&self) -> f64 {
        HEAD_THRESHOLD
    }

    /// Nodal conductivity `kappa(y_j, x)`.
    fn conductivity(&self, x: &DVector<f64>) -> Vec<f64> {
        let modes = self.config.d - 1;
        let n = self.config.segments;
        let mut kappa = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let row = &self.coeff[j * modes..(j + 1) * modes];
            let mut log_k = 1.0;
            for (c, xi) in row.iter().zip(x.iter().skip(1)) {
                log_k += c * xi;
            }
            kappa.push(log_k.exp());
        }
        kappa
    }

    /// Nodal head values, including the Dirichlet node.
    fn solve_head(&self, x: &DVector<f64>) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.config.d);
        let n = self.config.segments;
        let h = self.h;
        let kappa = self.conductivity(x);
        let slope0 = -((0.5_f64).sqrt() * x[0] - 2.0);

        // Harmonic-mean element conductivities.
        let ke: Vec<f64> = (0..n)
            .map(|e| 2.0 * kappa[e] * kappa[e + 1] / (kappa[e] + kappa[e + 1]))
            .collect();

        // Assemble the tridiagonal system in the unknowns u_0 .. u_{n-1};
        // u_n = 1 is folded into the load of the last row, and the Neumann
        // inlet contributes -kappa(0) u'(0) to the first.
        let mut diag = vec![0.0; n];
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        diag[0] = ke[0] / h;
        upper[0] = -ke[0] / h;
        rhs[0] = 0.5 * h * self.source[0] - kappa[0] * slope0;
        for j in 1..n {
            diag[j] = (ke[j - 1] + ke[j]) / h;
            lower[j] = -ke[j - 1] / h;
            upper[j] = -ke[j] / h;
            rhs[j] = h * self.source[j];
        }
        rhs[n - 1] += ke[n - 1] / h;

        // Thomas elimination; the matrix is SPD, so no pivoting is needed.
        for j in 1..n {
            let w = lower[j] / diag[j - 1];
            diag[j] -= w * upper[j - 1];
            rhs[j] -= w * rhs[j - 1];
        }
        let mut u = vec![0.0; n + 1];
        u[n] = 1.0;
        u[n - 1] = rhs[n - 1] / diag[n - 1];
        for j in (0..n - 1).rev() {
            u[j] = (rhs[j] - upper[j] * u[j + 1]) / diag[j];
        }
        u
    }
}

impl Lsf for DarcyLsf {
    fn dim(&self) -> usize {
        self.config.d
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let u = self.solve_head(x);
        let max_head = u.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        HEAD_THRESHOLD - max_head
    }

    fn evaluate(&self, x: &DVector<f64>) -> LsfEvaluation {
        LsfEvaluation {
            value: self.value(x),
            gradient: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    /// Exact head profile by flux integration: the flux
    /// `F(y) = kappa u' = kappa(0) u'(0) - int_0^y J` is known in closed form
    /// (Gaussian CDFs for the source integral), so
    /// `u(y) = 1 - int_y^1 F(s) / kappa(s) ds` follows from one cumulative
    /// quadrature of a smooth integrand.
    fn oracle_head_at_nodes(config: &DarcyConfig, x: &DVector<f64>, refine: usize) -> Vec<f64> {
        let modes = config.d - 1;
        let basis = kl_eigenpairs(modes, config.corr_length).unwrap();
        let kappa = |y: f64| -> f64 {
            let mut log_k = 1.0;
            for m in 0..modes {
                log_k += (0.3 * basis.lambda(m)).sqrt() * basis.phi(m, y) * x[m + 1];
            }
            log_k.exp()
        };
        let std_normal = Normal::new(0.0, 1.0).unwrap();
        let cum_source = |y: f64| -> f64 {
            0.8 * (1..=4)
                .map(|i| {
                    let mu = 0.2 * i as f64;
                    std_normal.cdf((y - mu) / 0.05) - std_normal.cdf(-mu / 0.05)
                })
                .sum::<f64>()
        };
        let slope0 = -((0.5_f64).sqrt() * x[0] - 2.0);
        let flux_over_kappa = |y: f64| (kappa(0.0) * slope0 - cum_source(y)) / kappa(y);

        // Cumulative trapezoid on a grid `refine` times finer than the mesh.
        let fine = config.segments * refine;
        let dh = 1.0 / fine as f64;
        let mut cum = vec![0.0; fine + 1];
        let mut prev = flux_over_kappa(0.0);
        for k in 1..=fine {
            let cur = flux_over_kappa(k as f64 * dh);
            cum[k] = cum[k - 1] + 0.5 * dh * (prev + cur);
            prev = cur;
        }
        let total = cum[fine];
        (0..=config.segments)
            .map(|j| 1.0 - (total - cum[j * refine]))
            .collect()
    }

    #[test]
    fn head_matches_flux_integration_oracle() {
        let config = DarcyConfig::default();
        let lsf = DarcyLsf::new(config.clone()).unwrap();

        let mut inputs = Vec::new();
        inputs.push(DVector::zeros(config.d));
        let mut structured = DVector::zeros(config.d);
        structured[0] = 1.0;
        for (m, v) in [0.9, -0.7, 0.5, -0.4, 0.3, 0.6, -0.5, 0.2].iter().enumerate() {
            structured[m + 1] = *v;
        }
        inputs.push(structured);

        for x in &inputs {
            let u = lsf.solve_head(x);
            let u_ref = oracle_head_at_nodes(&config, x, 40);
            let mut worst = 0.0_f64;
            for j in 0..u.len() {
                worst = worst.max((u[j] - u_ref[j]).abs());
            }
            assert!(worst < 1e-3, "max nodal head error {worst}");

            let g = lsf.value(x);
            let g_ref = HEAD_THRESHOLD
                - u_ref.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            assert!((g - g_ref).abs() < 1e-3, "g = {g}, oracle g = {g_ref}");
        }
    }

    #[test]
    fn zero_input_gives_dirichlet_maximum() {
        // With x = 0 the flux kappa(0) u'(0) = 2e exceeds the total injected
        // source 3.2, so u is strictly increasing and the maximum head is the
        // Dirichlet value u(1) = 1 exactly.
        let lsf = DarcyLsf::new(DarcyConfig::default()).unwrap();
        let g = lsf.value(&DVector::zeros(101));
        assert!((g - 1.7).abs() < 1e-12, "g(0) = {g}");
    }

    #[test]
    fn large_inlet_slope_triggers_failure() {
        // Driving x_1 far into the tail reverses the inlet flux, the head
        // builds up toward y = 0, and the threshold 2.7 is exceeded.
        let lsf = DarcyLsf::new(DarcyConfig::default()).unwrap();
        let mut x = DVector::zeros(101);
        x[0] = 6.0;
        let g = lsf.value(&x);
        assert!(g < 0.0, "expected failure, got g = {g}");
        let u = lsf.solve_head(&x);
        let max_at = u
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(max_at, 0, "head should peak at the inlet");
    }

    #[test]
    fn mesh_refinement_converges() {
        let mut x = DVector::zeros(21);
        x[0] = 2.5;
        for m in 1..=8 {
            x[m] = if m % 2 == 0 { -0.6 } else { 0.8 };
        }
        let g_of = |segments: usize| {
            let lsf = DarcyLsf::new(DarcyConfig {
                d: 21,
                segments,
                corr_length: 0.1,
            })
            .unwrap();
            lsf.value(&x)
        };
        let coarse = g_of(500);
        let fine = g_of(2000);
        assert!(
            (coarse - fine).abs() < 1e-3,
            "mesh sensitivity {} vs {}",
            coarse,
            fine
        );
    }

    #[test]
    fn dimension_and_gradient_flags() {
        let lsf = DarcyLsf::new(DarcyConfig::default()).unwrap();
        assert_eq!(lsf.dim(), 101);
        assert!(!lsf.has_analytic_gradient());
        assert!((lsf.head_threshold() - 2.7).abs() < 1e-15);
    }
}
