//! Baseline trackers: extended Kalman filter and constant-gain phase-locked
//! loop, both driven by observation increments.

use crate::error::{MtllError, Result};
use crate::model::DiffusionModel;
use crate::CausalFilter;

/// One continuous-discrete EKF step (Euler form). Returns `(x̂⁺, P⁺)`.
///
/// Gain `g = P h'(x̂)/(ε²ρ²)`; the covariance follows the Riccati equation
/// `Ṗ = 2 m'(x̂) P + ε²σ² − P² h'(x̂)²/(ε²ρ²)` and is floored at zero.
pub fn ekf_step(
    model: &DiffusionModel,
    xhat: f64,
    p: f64,
    dy: f64,
    t: f64,
    dt: f64,
) -> Result<(f64, f64)> {
    let hd = model
        .meas_deriv(xhat, t)
        .ok_or_else(|| MtllError::InvalidParameter("EKF requires a measurement derivative".into()))?;
    let md = model.drift_deriv(xhat, t);
    let e2r2 = model.eps * model.eps * model.rho * model.rho;
    let gain = p * hd / e2r2;
    let innovation = dy - dt * model.meas(xhat, t);
    let x_next = xhat + dt * model.drift(xhat, t) + gain * innovation;
    let p_next = (p + dt * (2.0 * md * p + model.eps * model.eps * model.sigma * model.sigma
        - p * p * hd * hd / e2r2))
        .max(0.0);
    if !x_next.is_finite() || !p_next.is_finite() {
        return Err(MtllError::Divergence(format!(
            "EKF produced non-finite state at t = {t}: xhat = {x_next}, P = {p_next}"
        )));
    }
    Ok((x_next, p_next))
}

/// One constant-gain loop step: `x̂⁺ = x̂ + Δt·m(x̂) + K (Δy − Δt·h(x̂))`.
pub fn pll_step(model: &DiffusionModel, xhat: f64, gain: f64, dy: f64, t: f64, dt: f64) -> f64 {
    xhat + dt * model.drift(xhat, t) + gain * (dy - dt * model.meas(xhat, t))
}

/// Default loop gain `K = σ/ρ`, balancing the two noise intensities.
pub fn default_pll_gain(model: &DiffusionModel) -> f64 {
    model.sigma / model.rho
}

/// Extended Kalman filter state.
#[derive(Debug, Clone)]
pub struct Ekf {
    model: DiffusionModel,
    pub xhat: f64,
    pub p: f64,
}

impl Ekf {
    pub fn new(model: DiffusionModel, x0: f64, p0: f64) -> Result<Self> {
        if model.meas_deriv(x0, 0.0).is_none() {
            return Err(MtllError::InvalidParameter(
                "EKF requires a measurement derivative".into(),
            ));
        }
        if !(p0 >= 0.0) || !p0.is_finite() {
            return Err(MtllError::InvalidParameter(format!(
                "initial covariance must be nonnegative, got {p0}"
            )));
        }
        Ok(Ekf { model, xhat: x0, p: p0 })
    }

    /// Stationary covariance of the linear Riccati equation with slopes
    /// `m' = a`, `h' = c` (the fixed point the EKF covariance relaxes to).
    pub fn stationary_covariance(model: &DiffusionModel, a: f64, c: f64) -> f64 {
        let e2 = model.eps * model.eps;
        let r2 = model.rho * model.rho;
        let s2 = model.sigma * model.sigma;
        e2 * r2 * (a + (a * a + c * c * s2 / r2).sqrt()) / (c * c)
    }
}

impl CausalFilter for Ekf {
    fn estimate(&self) -> f64 {
        self.xhat
    }

    fn step(&mut self, dy: f64, t: f64, dt: f64) -> Result<f64> {
        let (x, p) = ekf_step(&self.model, self.xhat, self.p, dy, t, dt)?;
        self.xhat = x;
        self.p = p;
        Ok(self.xhat)
    }
}

/// Constant-gain tracking loop.
#[derive(Debug, Clone)]
pub struct Pll {
    model: DiffusionModel,
    pub xhat: f64,
    pub gain: f64,
}

impl Pll {
    pub fn new(model: DiffusionModel, x0: f64, gain: Option<f64>) -> Result<Self> {
        let gain = gain.unwrap_or_else(|| default_pll_gain(&model));
        if !gain.is_finite() {
            return Err(MtllError::InvalidParameter(format!("gain must be finite, got {gain}")));
        }
        Ok(Pll { model, xhat: x0, gain })
    }
}

impl CausalFilter for Pll {
    fn estimate(&self) -> f64 {
        self.xhat
    }

    fn step(&mut self, dy: f64, t: f64, dt: f64) -> Result<f64> {
        let x = pll_step(&self.model, self.xhat, self.gain, dy, t, dt);
        if !x.is_finite() {
            return Err(MtllError::Divergence(format!(
                "loop produced non-finite state at t = {t}"
            )));
        }
        self.xhat = x;
        Ok(x)
    }
}
