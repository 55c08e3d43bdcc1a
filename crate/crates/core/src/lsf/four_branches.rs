//! Four-branches series system, the classical 2-D multi-modal benchmark.
//!
//! ```text
//! g(x) = min { 3 + 0.1 (x1 - x2)^2 - (x1 + x2) / sqrt(2),
//!              3 + 0.1 (x1 - x2)^2 + (x1 + x2) / sqrt(2),
//!              (x1 - x2) + 7 / sqrt(2),
//!              (x2 - x1) + 7 / sqrt(2) }
//! ```
//!
//! The failure set has four disjoint components (two dominant diagonal
//! modes from the quadratic branches, two smaller corner modes from the
//! linear ones). The min of smooth branches is differentiable except on the
//! tie set; the gradient returned here is the subgradient of the active
//! branch, with ties broken towards the smallest branch index so evaluation
//! is deterministic.

use nalgebra::DVector;

use super::{Lsf, LsfEvaluation};

/// The four-branches limit state (fixed `d = 2`).
#[derive(Debug, Clone, Copy, Default)]
pub struct FourBranchesLsf;

impl FourBranchesLsf {
    /// Reference failure probability quoted for this benchmark.
    pub const REFERENCE_PROBABILITY: f64 = 2.22e-3;

    /// Values of all four branches at `(x1, x2)`.
    pub fn branches(x1: f64, x2: f64) -> [f64; 4] {
        let s = std::f64::consts::SQRT_2;
        let diff = x1 - x2;
        let quad = 3.0 + 0.1 * diff * diff;
        [
            quad - (x1 + x2) / s,
            quad + (x1 + x2) / s,
            diff + 7.0 / s,
            -diff + 7.0 / s,
        ]
    }

    /// Index of the active (minimal) branch, ties to the smallest index.
    pub fn active_branch(x1: f64, x2: f64) -> usize {
        let values = Self::branches(x1, x2);
        let mut best = 0;
        for (k, &v) in values.iter().enumerate().skip(1) {
            if v < values[best] {
                best = k;
            }
        }
        best
    }

    fn branch_gradient(k: usize, x1: f64, x2: f64) -> [f64; 2] {
        let s = std::f64::consts::SQRT_2;
        let diff = x1 - x2;
        match k {
            0 => [0.2 * diff - 1.0 / s, -0.2 * diff - 1.0 / s],
            1 => [0.2 * diff + 1.0 / s, -0.2 * diff + 1.0 / s],
            2 => [1.0, -1.0],
            _ => [-1.0, 1.0],
        }
    }
}

impl Lsf for FourBranchesLsf {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let values = Self::branches(x[0], x[1]);
        values.into_iter().fold(f64::INFINITY, f64::min)
    }

    fn evaluate(&self, x: &DVector<f64>) -> LsfEvaluation {
        let (x1, x2) = (x[0], x[1]);
        let k = Self::active_branch(x1, x2);
        let grad = Self::branch_gradient(k, x1, x2);
        LsfEvaluation {
            value: Self::branches(x1, x2)[k],
            gradient: Some(DVector::from_column_slice(&grad)),
        }
    }

    fn has_analytic_gradient(&self) -> bool {
        true
    }
}
