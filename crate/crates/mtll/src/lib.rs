//! Loss-of-lock benchmark for one-dimensional nonlinear filtering.
//!
//! A diffusion `dx = m(x,t) dt + εσ dw` is observed through a noisy channel
//! `dy = h(x,t) dt + ερ dν`. A causal filter produces an estimate `x̂(t)`;
//! lock is lost when the error `e = x - x̂` first leaves a lock domain such
//! as `(-π, π)`. This crate estimates the mean time to lose lock (MTLL)
//! three ways — closed-loop Monte Carlo over tracker baselines, a weighted
//! particle ensemble conditioned on a fixed observation record, and a
//! finite-difference solution of the Zakai equation with absorbing
//! boundaries — and implements the causal minimum-noise-energy filter by
//! dynamic programming on a state lattice.

pub mod bench;
pub mod error;
pub mod lock;
pub mod mne;
pub mod model;
pub mod particle;
pub mod rng;
pub mod sde;
pub mod trackers;
pub mod zakai;

pub use error::{MtllError, Result};

/// A causal estimator of the state, driven by observation increments.
///
/// The estimator only ever sees increments in order through [`CausalFilter::step`],
/// so it is adapted by construction: `estimate()` at time `t_k` depends on
/// `Δy_0, …, Δy_{k-1}` alone.
pub trait CausalFilter {
    /// The current estimate `x̂(t_k)`, before seeing `Δy_k`.
    fn estimate(&self) -> f64;

    /// Consume `Δy_k` (the increment over `[t_k, t_k + dt)`) and return the
    /// advanced estimate `x̂(t_{k+1})`. `t` is the left endpoint `t_k`.
    fn step(&mut self, dy: f64, t: f64, dt: f64) -> Result<f64>;
}
