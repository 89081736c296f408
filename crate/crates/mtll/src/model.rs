//! Diffusion/observation models and the benchmark phase model.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{MtllError, Result};

/// A state- and time-dependent coefficient, `(x, t) -> value`.
pub type StateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// The model `dx = m(x,t) dt + εσ dw`, `dy = h(x,t) dt + ερ dν`.
///
/// `eps` is carried explicitly rather than folded into the noise scales so
/// that cost functionals which are invariant under a common `1/ε²` factor
/// can drop it exactly.
#[derive(Clone)]
pub struct DiffusionModel {
    drift: StateFn,
    meas: StateFn,
    meas_deriv: Option<StateFn>,
    drift_deriv: Option<StateFn>,
    pub sigma: f64,
    pub rho: f64,
    pub eps: f64,
    /// True when `m` and `h` do not depend on `t`; lets lattice filters
    /// cache per-node coefficient evaluations.
    pub autonomous: bool,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("sigma", &self.sigma)
            .field("rho", &self.rho)
            .field("eps", &self.eps)
            .field("autonomous", &self.autonomous)
            .finish()
    }
}

fn check_scales(eps: f64, sigma: f64, rho: f64) -> Result<()> {
    for (name, v) in [("eps", eps), ("sigma", sigma), ("rho", rho)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(MtllError::InvalidParameter(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    Ok(())
}

impl DiffusionModel {
    /// General constructor for custom fixtures.
    pub fn new(drift: StateFn, meas: StateFn, eps: f64, sigma: f64, rho: f64) -> Result<Self> {
        check_scales(eps, sigma, rho)?;
        Ok(DiffusionModel {
            drift,
            meas,
            meas_deriv: None,
            drift_deriv: None,
            sigma,
            rho,
            eps,
            autonomous: true,
        })
    }

    pub fn with_meas_deriv(mut self, d: StateFn) -> Self {
        self.meas_deriv = Some(d);
        self
    }

    pub fn with_drift_deriv(mut self, d: StateFn) -> Self {
        self.drift_deriv = Some(d);
        self
    }

    pub fn with_autonomous(mut self, autonomous: bool) -> Self {
        self.autonomous = autonomous;
        self
    }

    #[inline]
    pub fn drift(&self, x: f64, t: f64) -> f64 {
        (self.drift)(x, t)
    }

    #[inline]
    pub fn meas(&self, x: f64, t: f64) -> f64 {
        (self.meas)(x, t)
    }

    /// `∂h/∂x`, when the model supplies it. Trackers require this.
    pub fn meas_deriv(&self, x: f64, t: f64) -> Option<f64> {
        self.meas_deriv.as_ref().map(|f| f(x, t))
    }

    /// `∂m/∂x`, falling back to a centered difference.
    pub fn drift_deriv(&self, x: f64, t: f64) -> f64 {
        match &self.drift_deriv {
            Some(f) => f(x, t),
            None => {
                let d = 1e-5;
                (self.drift(x + d, t) - self.drift(x - d, t)) / (2.0 * d)
            }
        }
    }

    /// Sample `m` and `h` at `t = 0` over an enclosing interval and reject
    /// models producing non-finite values there.
    pub fn validate_on(&self, lo: f64, hi: f64) -> Result<()> {
        let pad = 0.5 * (hi - lo);
        let (a, b) = (lo - pad, hi + pad);
        let n = 64;
        for i in 0..=n {
            let x = a + (b - a) * i as f64 / n as f64;
            if !self.drift(x, 0.0).is_finite() {
                return Err(MtllError::InvalidParameter(format!("drift not finite at x={x}")));
            }
            if !self.meas(x, 0.0).is_finite() {
                return Err(MtllError::InvalidParameter(format!("meas not finite at x={x}")));
            }
        }
        Ok(())
    }
}

/// The interval of tolerable estimation errors; reaching its boundary is
/// loss of lock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockDomain {
    pub lo: f64,
    pub hi: f64,
}

impl LockDomain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(MtllError::InvalidParameter(format!(
                "lock domain requires lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(LockDomain { lo, hi })
    }

    #[inline]
    pub fn contains(&self, e: f64) -> bool {
        e > self.lo && e < self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn shifted(&self, c: f64) -> LockDomain {
        LockDomain { lo: self.lo + c, hi: self.hi + c }
    }
}

/// Benchmark phase model: Brownian phase (`m ≡ 0`), `h(x) = sin x`,
/// lock domain `(-π, π)`.
pub fn make_phase_model(eps: f64, sigma: f64, rho: f64) -> Result<(DiffusionModel, LockDomain)> {
    make_phase_model_with_drift(0.0, eps, sigma, rho)
}

/// Phase model with a constant drift `m ≡ β` (frequency offset).
pub fn make_phase_model_with_drift(
    beta: f64,
    eps: f64,
    sigma: f64,
    rho: f64,
) -> Result<(DiffusionModel, LockDomain)> {
    if !beta.is_finite() {
        return Err(MtllError::InvalidParameter(format!("beta must be finite, got {beta}")));
    }
    let model = DiffusionModel::new(
        Arc::new(move |_x, _t| beta),
        Arc::new(|x, _t| x.sin()),
        eps,
        sigma,
        rho,
    )?
    .with_meas_deriv(Arc::new(|x, _t| x.cos()))
    .with_drift_deriv(Arc::new(|_x, _t| 0.0));
    let domain = LockDomain::new(-PI, PI)?;
    model.validate_on(domain.lo, domain.hi)?;
    Ok((model, domain))
}

/// Linear test fixture: `m(x) = a·x`, `h(x) = c·x`.
pub fn make_linear_model(a: f64, c: f64, eps: f64, sigma: f64, rho: f64) -> Result<DiffusionModel> {
    if !a.is_finite() || !c.is_finite() {
        return Err(MtllError::InvalidParameter(format!("a, c must be finite, got {a}, {c}")));
    }
    Ok(DiffusionModel::new(
        Arc::new(move |x, _t| a * x),
        Arc::new(move |x, _t| c * x),
        eps,
        sigma,
        rho,
    )?
    .with_meas_deriv(Arc::new(move |_x, _t| c))
    .with_drift_deriv(Arc::new(move |_x, _t| a)))
}
