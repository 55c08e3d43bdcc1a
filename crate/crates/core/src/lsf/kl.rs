//! Karhunen-Loeve eigenpairs of the exponential kernel on `[0, 1]`.
//!
//! The covariance operator `(Cf)(y) = int_0^1 exp(-|y - y'| / ell) f(y') dy'`
//! admits a classical semi-analytic eigendecomposition. Shifting to the
//! symmetric interval `[-1/2, 1/2]` and writing `c = 1/ell`, eigenfunctions
//! split into an even family `cos(w (y - 1/2))` with frequencies solving
//! `2t sin t = c cos t` (where `t = w/2`, one root per `(k pi, k pi + pi/2)`)
//! and an odd family `sin(w (y - 1/2))` solving `c sin t = -2t cos t`
//! (one root per `(k pi + pi/2, (k+1) pi)`). Both characteristic equations
//! are used in pole-free product form so plain bisection brackets every
//! root. Eigenvalues are `lambda = 2c / (w^2 + c^2)`, strictly decreasing in
//! `w`, and the families interleave, so generating them alternately yields
//! the spectrum in descending order. The eigenfunctions are normalised to
//! unit `L^2([0,1])` norm.

use crate::error::{Error, Result};

/// Parity of a KL mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlMode {
    /// `phi(y) = n * cos(w (y - 1/2))`.
    Even,
    /// `phi(y) = n * sin(w (y - 1/2))`.
    Odd,
}

/// Ordered KL eigenpairs of the exponential kernel.
#[derive(Debug, Clone)]
pub struct KlBasis {
    corr_length: f64,
    lambdas: Vec<f64>,
    omegas: Vec<f64>,
    norms: Vec<f64>,
    modes: Vec<KlMode>,
}

impl KlBasis {
    /// Number of modes.
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    /// Whether the basis is empty.
    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Correlation length `ell`.
    pub fn corr_length(&self) -> f64 {
        self.corr_length
    }

    /// `i`-th eigenvalue (descending order).
    pub fn lambda(&self, i: usize) -> f64 {
        self.lambdas[i]
    }

    /// All eigenvalues.
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `i`-th angular frequency `w`.
    pub fn omega(&self, i: usize) -> f64 {
        self.omegas[i]
    }

    /// Parity of mode `i`.
    pub fn mode(&self, i: usize) -> KlMode {
        self.modes[i]
    }

    /// Evaluate eigenfunction `phi_i` at `y` in `[0, 1]`.
    pub fn phi(&self, i: usize, y: f64) -> f64 {
        let arg = self.omegas[i] * (y - 0.5);
        match self.modes[i] {
            KlMode::Even => self.norms[i] * arg.cos(),
            KlMode::Odd => self.norms[i] * arg.sin(),
        }
    }
}

/// Bisection to absolute tolerance `1e-12` on a bracketing interval.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Numerical {
            context: "kl_eigenpairs",
            detail: format!("no sign change on bracket [{lo}, {hi}]"),
        });
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid == 0.0 {
            return Ok(mid);
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// First `count` KL eigenpairs of `exp(-|y - y'| / corr_length)` on `[0, 1]`.
pub fn kl_eigenpairs(count: usize, corr_length: f64) -> Result<KlBasis> {
    if !(corr_length > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "correlation length must be positive, got {corr_length}"
        )));
    }
    let c = 1.0 / corr_length;
    let pi = std::f64::consts::PI;
    // Tiny inset keeps the bracket endpoints off the root-free pole lines
    // t = k pi + pi/2 where both product forms can share a sign.
    let inset = 1e-9;

    let mut lambdas = Vec::with_capacity(count);
    let mut omegas = Vec::with_capacity(count);
    let mut norms = Vec::with_capacity(count);
    let mut modes = Vec::with_capacity(count);

    for i in 0..count {
        let k = (i / 2) as f64;
        let (mode, t) = if i % 2 == 0 {
            // Even family: 2t sin t - c cos t = 0 on (k pi, k pi + pi/2).
            let f = |t: f64| 2.0 * t * t.sin() - c * t.cos();
            (KlMode::Even, bisect(f, k * pi + inset, k * pi + 0.5 * pi - inset)?)
        } else {
            // Odd family: c sin t + 2t cos t = 0 on (k pi + pi/2, (k+1) pi).
            let f = |t: f64| c * t.sin() + 2.0 * t * t.cos();
            (KlMode::Odd, bisect(f, k * pi + 0.5 * pi + inset, (k + 1.0) * pi - inset)?)
        };
        let omega = 2.0 * t;
        // L2 norm over [-1/2, 1/2]: cos^2 integrates to 1/2 + sin(w)/(2w),
        // sin^2 to 1/2 - sin(w)/(2w).
        let half_sinc = omega.sin() / (2.0 * omega);
        let norm_sq = match mode {
            KlMode::Even => 0.5 + half_sinc,
            KlMode::Odd => 0.5 - half_sinc,
        };
        lambdas.push(2.0 * c / (omega * omega + c * c));
        omegas.push(omega);
        norms.push(norm_sq.sqrt().recip());
        modes.push(mode);
    }

    Ok(KlBasis {
        corr_length,
        lambdas,
        omegas,
        norms,
        modes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Oracle: apply the covariance operator by quadrature. The kernel has a
    /// kink at `y' = y`, so integrate the two smooth halves separately with
    /// composite Simpson.
    fn apply_operator(basis: &KlBasis, i: usize, y: f64, ell: f64) -> f64 {
        let kernel = |a: f64, b: f64| (-(a - b).abs() / ell).exp();
        let simpson = |lo: f64, hi: f64| -> f64 {
            if hi - lo < 1e-14 {
                return 0.0;
            }
            let n = 2000; // even
            let h = (hi - lo) / n as f64;
            let mut acc = kernel(y, lo) * basis.phi(i, lo) + kernel(y, hi) * basis.phi(i, hi);
            for j in 1..n {
                let t = lo + j as f64 * h;
                let w = if j % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * kernel(y, t) * basis.phi(i, t);
            }
            acc * h / 3.0
        };
        simpson(0.0, y) + simpson(y, 1.0)
    }

    #[test]
    fn characteristic_equations_have_tiny_residuals() {
        let basis = kl_eigenpairs(40, 0.1).unwrap();
        let c = 10.0;
        for i in 0..basis.len() {
            let t = basis.omega(i) / 2.0;
            let residual = match basis.mode(i) {
                KlMode::Even => 2.0 * t * t.sin() - c * t.cos(),
                KlMode::Odd => c * t.sin() + 2.0 * t * t.cos(),
            };
            // Scale by the derivative magnitude ~ (2 + c) t to turn the
            // bisection tolerance into a residual tolerance.
            assert!(
                residual.abs() <= 1e-9 * (1.0 + (2.0 + c) * t),
                "mode {i}: residual {residual}"
            );
        }
    }

    #[test]
    fn eigenpairs_satisfy_integral_equation() {
        let ell = 0.1;
        let basis = kl_eigenpairs(12, ell).unwrap();
        for i in [0usize, 1, 2, 5, 11] {
            for k in 0..20 {
                let y = (k as f64 + 0.5) / 20.0;
                let lhs = apply_operator(&basis, i, y, ell);
                let rhs = basis.lambda(i) * basis.phi(i, y);
                let scale = basis.lambda(i) * basis.norms[i].max(1.0);
                assert!(
                    (lhs - rhs).abs() <= 1e-4 * scale.max(rhs.abs()),
                    "mode {i} at y={y}: operator {lhs} vs lambda*phi {rhs}"
                );
            }
        }
    }

    #[test]
    fn eigenvalues_descend_and_trace_is_bounded_by_one() {
        let basis = kl_eigenpairs(100, 0.1).unwrap();
        for i in 1..basis.len() {
            assert!(
                basis.lambda(i) < basis.lambda(i - 1),
                "lambda not strictly decreasing at {i}"
            );
        }
        // Mercer: sum of all eigenvalues equals int_0^1 k(y,y) dy = 1.
        let partial: f64 = basis.lambdas().iter().sum();
        assert!(partial < 1.0);
        assert!(partial > 0.95, "100 modes should capture most of the trace");
    }

    #[test]
    fn eigenfunctions_are_normalised_and_orthogonal() {
        let basis = kl_eigenpairs(6, 0.25).unwrap();
        let n = 4000;
        let h = 1.0 / n as f64;
        for i in 0..basis.len() {
            for j in i..basis.len() {
                // Composite Simpson for int phi_i phi_j.
                let mut acc = basis.phi(i, 0.0) * basis.phi(j, 0.0)
                    + basis.phi(i, 1.0) * basis.phi(j, 1.0);
                for k in 1..n {
                    let y = k as f64 * h;
                    let w = if k % 2 == 1 { 4.0 } else { 2.0 };
                    acc += w * basis.phi(i, y) * basis.phi(j, y);
                }
                let integral = acc * h / 3.0;
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (integral - want).abs() < 1e-8,
                    "inner product ({i},{j}) = {integral}"
                );
            }
        }
    }
}
