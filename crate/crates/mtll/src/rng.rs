//! Counter-based Gaussian noise streams.
//!
//! Every draw is a pure function of `(seed, trajectory, step, channel)`, so
//! particle `j`'s noise does not depend on the ensemble size or on the order
//! in which trajectories are advanced. This is what makes parallel Monte
//! Carlo campaigns bit-reproducible regardless of worker count.

use std::f64::consts::TAU;

/// Noise channel carrying the state Brownian increments `Δw`.
pub const STATE_CHANNEL: u32 = 0;
/// Noise channel carrying the observation Brownian increments `Δν`.
pub const OBS_CHANNEL: u32 = 1;

const C_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
const C_TRAJ: u64 = 0xbf58_476d_1ce4_e5b9;
const C_STEP: u64 = 0x94d0_49bb_1331_11eb;
const C_CHAN: u64 = 0xd6e8_feb8_6659_fd93;
const C_LO: u64 = 0x2545_f491_4f6c_dd1d;
const C_HI: u64 = 0x9e6c_63d0_876a_90bd;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Map a u64 to the open interval (0, 1) with 53-bit resolution.
#[inline]
fn to_unit(x: u64) -> f64 {
    (((x >> 11) as f64) + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Derive an independent sub-seed, e.g. one seed per realization of a campaign.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix(mix(base ^ C_SEED) ^ index.wrapping_mul(C_TRAJ))
}

/// A keyed, stateless stream of standard normal variates for one trajectory.
#[derive(Debug, Clone, Copy)]
pub struct NoiseStream {
    key: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, trajectory: u64) -> Self {
        let key = mix(mix(seed ^ C_SEED) ^ trajectory.wrapping_mul(C_TRAJ) ^ C_CHAN);
        NoiseStream { key }
    }

    /// Standard normal draw for `(step, channel)`, independent across keys.
    #[inline]
    pub fn standard_normal(&self, step: u64, channel: u32) -> f64 {
        let h = mix(self.key ^ step.wrapping_mul(C_STEP) ^ (channel as u64).wrapping_mul(C_CHAN));
        let u1 = to_unit(mix(h ^ C_LO));
        let u2 = to_unit(mix(h ^ C_HI));
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    /// Brownian increment over a step of length `dt`.
    #[inline]
    pub fn increment(&self, step: u64, channel: u32, dt: f64) -> f64 {
        self.standard_normal(step, channel) * dt.sqrt()
    }
}
