//! Rare-event probability estimation with interacting-particle Langevin
//! sampling and importance-sampling mixture densities.
//!
//! The pipeline estimates small failure probabilities `P(g(X) <= 0)` for a
//! standard-normal input `X` in three stages:
//!
//! 1. **Sampling** — an affine-invariant interacting Langevin ensemble
//!    relaxes toward a smoothed optimal importance-sampling density through a
//!    sequence of tempered levels ([`sampler`], [`smoothing`]).
//! 2. **Density fitting** — the final ensemble is summarised by a mixture of
//!    von Mises-Fisher-Nakagami components fitted with EM ([`vmfnm`],
//!    [`clustering`]).
//! 3. **Estimation** — an unbiased importance-sampling estimate of the
//!    failure probability is computed from fresh mixture draws
//!    ([`estimator`]).
//!
//! Limit-state functions live in [`lsf`] together with the call-accounting
//! used to compare methods by computational cost.

pub mod clustering;
pub mod error;
pub mod estimator;
pub mod lsf;
pub mod rng;
pub mod sampler;
pub mod smoothing;
pub mod vmfnm;

pub use error::{Error, Result};
