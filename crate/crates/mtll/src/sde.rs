//! Euler–Maruyama simulation of state, observation, and error trajectories.

use std::io::Write;

use crate::error::{MtllError, Result};
use crate::model::DiffusionModel;
use crate::rng::{NoiseStream, OBS_CHANNEL, STATE_CHANNEL};
use crate::CausalFilter;

/// Uniform grid `t_i = i·Δt`, `i = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(MtllError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if n_steps < 1 {
            return Err(MtllError::InvalidParameter("n_steps must be >= 1".into()));
        }
        Ok(TimeGrid { dt, n_steps })
    }

    #[inline]
    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.t(self.n_steps)
    }
}

/// One simulated trajectory: state values at grid nodes and observation
/// increments over grid intervals. Increments rather than cumulative `y`
/// are stored to avoid cancellation at small `Δt`.
#[derive(Debug, Clone)]
pub struct SamplePath {
    pub grid: TimeGrid,
    pub x: Vec<f64>,
    pub dy: Vec<f64>,
}

fn check_finite(v: f64, step: usize, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MtllError::NonFinite { step, what })
    }
}

/// Simulate `(x, Δy)` by the explicit Euler scheme with drift evaluated at
/// the left endpoint. Bit-identical output for identical
/// `(model, grid, x0, seed)`.
pub fn simulate_pair(model: &DiffusionModel, grid: TimeGrid, x0: f64, seed: u64) -> Result<SamplePath> {
    let stream = NoiseStream::new(seed, 0);
    simulate_pair_keyed(model, grid, x0, &stream)
}

/// As [`simulate_pair`], but drawing from a caller-supplied keyed stream
/// (used for per-trajectory streams in ensembles).
pub fn simulate_pair_keyed(
    model: &DiffusionModel,
    grid: TimeGrid,
    x0: f64,
    stream: &NoiseStream,
) -> Result<SamplePath> {
    let n = grid.n_steps;
    let dt = grid.dt;
    let mut x = Vec::with_capacity(n + 1);
    let mut dy = Vec::with_capacity(n);
    let mut xi = x0;
    x.push(xi);
    for i in 0..n {
        let t = grid.t(i);
        let m = check_finite(model.drift(xi, t), i, "drift")?;
        let h = check_finite(model.meas(xi, t), i, "measurement")?;
        let dw = stream.increment(i as u64, STATE_CHANNEL, dt);
        let dv = stream.increment(i as u64, OBS_CHANNEL, dt);
        dy.push(dt * h + model.eps * model.rho * dv);
        xi = check_finite(xi + dt * m + model.eps * model.sigma * dw, i, "state")?;
        x.push(xi);
    }
    Ok(SamplePath { grid, x, dy })
}

/// Deterministic Euler integration with all noise increments zero.
pub fn zero_noise_pair(model: &DiffusionModel, grid: TimeGrid, x0: f64) -> Result<SamplePath> {
    let n = grid.n_steps;
    let dt = grid.dt;
    let mut x = Vec::with_capacity(n + 1);
    let mut dy = Vec::with_capacity(n);
    let mut xi = x0;
    x.push(xi);
    for i in 0..n {
        let t = grid.t(i);
        let m = check_finite(model.drift(xi, t), i, "drift")?;
        let h = check_finite(model.meas(xi, t), i, "measurement")?;
        dy.push(dt * h);
        xi = check_finite(xi + dt * m, i, "state")?;
        x.push(xi);
    }
    Ok(SamplePath { grid, x, dy })
}

/// Simulate the closed-loop error process `e = x - x̂` together with the
/// observation increments that drive the filter.
///
/// The filter sees each `Δy_i` exactly once and in order, so its estimate at
/// `t_i` can depend on `Δy_0..Δy_{i-1}` only; causality is enforced by the
/// shape of the [`CausalFilter`] interface rather than by a runtime check.
/// The returned path's `x` field holds the error values `e(t_i)`.
pub fn simulate_error_pair(
    model: &DiffusionModel,
    grid: TimeGrid,
    e0: f64,
    filter: &mut dyn CausalFilter,
    seed: u64,
) -> Result<SamplePath> {
    let stream = NoiseStream::new(seed, 0);
    let n = grid.n_steps;
    let dt = grid.dt;
    let mut e = Vec::with_capacity(n + 1);
    let mut dy = Vec::with_capacity(n);
    let mut ei = e0;
    let mut xh = filter.estimate();
    e.push(ei);
    for i in 0..n {
        let t = grid.t(i);
        let xi = xh + ei;
        let m = check_finite(model.drift(xi, t), i, "drift")?;
        let h = check_finite(model.meas(xi, t), i, "measurement")?;
        let dw = stream.increment(i as u64, STATE_CHANNEL, dt);
        let dv = stream.increment(i as u64, OBS_CHANNEL, dt);
        let dyi = dt * h + model.eps * model.rho * dv;
        dy.push(dyi);
        let xh_next = filter.step(dyi, t, dt)?;
        // e_{i+1} = e_i + Δt·[m(x̂+e) - Δx̂/Δt] + εσ·Δw
        ei = check_finite(
            ei + dt * m + model.eps * model.sigma * dw - (xh_next - xh),
            i,
            "error state",
        )?;
        e.push(ei);
        xh = xh_next;
    }
    Ok(SamplePath { grid, x: e, dy })
}

/// CSV export with columns `t, x, dy` (`dy` empty on the last row).
pub fn write_path_csv<W: Write>(path: &SamplePath, out: &mut W) -> Result<()> {
    writeln!(out, "t,x,dy")?;
    for i in 0..=path.grid.n_steps {
        if i < path.dy.len() {
            writeln!(out, "{},{},{}", path.grid.t(i), path.x[i], path.dy[i])?;
        } else {
            writeln!(out, "{},{},", path.grid.t(i), path.x[i])?;
        }
    }
    Ok(())
}

/// A filter frozen at a constant estimate; useful as an open-loop reference.
pub struct FrozenFilter {
    pub xhat: f64,
}

impl CausalFilter for FrozenFilter {
    fn estimate(&self) -> f64 {
        self.xhat
    }

    fn step(&mut self, _dy: f64, _t: f64, _dt: f64) -> Result<f64> {
        Ok(self.xhat)
    }
}
