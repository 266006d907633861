//! Over-the-air aggregation under block fading with channel inversion.
//!
//! Each device pre-scales its gradient by `sqrt(c_r)/|h_k|`, so after the
//! receiver normalises by `K·sqrt(c_r)` the superposition is the exact device
//! average plus Gaussian noise of per-coordinate variance `p_n / c_r`. With
//! perfect CSI the channel phase cancels, so only magnitudes are simulated.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Per-device channel magnitudes for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h_mag: Vec<f64>,
    pub h_floor: f64,
}

impl ChannelRealization {
    pub fn new(h_mag: Vec<f64>, h_floor: f64) -> Result<Self> {
        if !(h_floor > 0.0) {
            return Err(Error::invalid("h_floor must be positive"));
        }
        if h_mag.iter().any(|&h| !(h >= h_floor) || !h.is_finite()) {
            return Err(Error::invalid("channel magnitudes must be finite and at least h_floor"));
        }
        Ok(Self { h_mag, h_floor })
    }

    pub fn weakest(&self) -> f64 {
        self.h_mag.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Rayleigh magnitudes with `E|h|² = 1`, conditioned on `|h| ≥ h_floor`.
///
/// `|h|²` is unit exponential, and an exponential conditioned to exceed a
/// threshold is the threshold plus a fresh unit exponential, so the
/// truncation is exact without rejection.
pub fn draw_channel<R: Rng + ?Sized>(k: usize, h_floor: f64, rng: &mut R) -> Result<ChannelRealization> {
    if k == 0 {
        return Err(Error::invalid("at least one device"));
    }
    if !(h_floor > 0.0) || !h_floor.is_finite() {
        return Err(Error::invalid("h_floor must be positive"));
    }
    let floor_sq = h_floor * h_floor;
    let h_mag = (0..k)
        .map(|_| {
            let u: f64 = rng.random();
            // u in [0, 1); 1 - u in (0, 1] keeps the log finite.
            (floor_sq - (1.0 - u).ln()).sqrt()
        })
        .collect();
    ChannelRealization::new(h_mag, h_floor)
}

/// Transmit scaling `ρ = sqrt(c_r) / |h|`.
pub fn inversion_power(c_r: f64, h_mag: f64) -> Result<f64> {
    if !(c_r > 0.0) {
        return Err(Error::invalid(format!("denoising factor must be positive, got {c_r}")));
    }
    if !(h_mag > 0.0) {
        return Err(Error::invalid("channel magnitude must be positive"));
    }
    Ok(c_r.sqrt() / h_mag)
}

/// Peak-power condition `0 < c_r ≤ P_max · |h|²`.
pub fn peak_power_ok(c_r: f64, h_mag: f64, p_cm_max: f64) -> bool {
    c_r > 0.0 && c_r <= p_cm_max * h_mag * h_mag
}

/// Average of the device gradients plus `N(0, p_n/c_r)` per coordinate.
/// A noiseless channel (`p_n = 0`) accepts `c_r = 0`.
pub fn aggregate<V: AsRef<[f64]>, R: Rng + ?Sized>(
    local_grads: &[V],
    c_r: f64,
    p_n: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let first = local_grads
        .first()
        .ok_or_else(|| Error::invalid("aggregation needs at least one device"))?;
    let d = first.as_ref().len();
    for g in local_grads {
        check_dim("device gradient", d, g.as_ref().len())?;
    }
    if !(p_n >= 0.0) {
        return Err(Error::invalid("noise power must be nonnegative"));
    }
    if !(c_r > 0.0 || (p_n == 0.0 && c_r == 0.0)) {
        return Err(Error::invalid(format!("denoising factor must be positive, got {c_r}")));
    }
    let mut out = vec![0.0; d];
    for g in local_grads {
        for (o, v) in out.iter_mut().zip(g.as_ref()) {
            *o += v;
        }
    }
    let k = local_grads.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    if p_n > 0.0 {
        let std = (p_n / c_r).sqrt();
        for o in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *o += std * z;
        }
    }
    Ok(out)
}

/// Communication-side constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommParams {
    /// Receiver noise power `p_n` (W).
    pub p_n: f64,
    /// Peak transmit power `P_cm^max` (W).
    pub p_cm_max: f64,
    /// Slot duration `T_1` (s).
    pub t1: f64,
    /// Scalars carried per slot.
    pub l_slot: usize,
    /// Slots per upload, `ceil(d / l_slot)`.
    pub t_slots: usize,
}

impl CommParams {
    pub fn new(p_n: f64, p_cm_max: f64, t1: f64, l_slot: usize, model_dim: usize) -> Result<Self> {
        if !(p_n >= 0.0) || !(p_cm_max > 0.0) || !(t1 > 0.0) || l_slot == 0 || model_dim == 0 {
            return Err(Error::invalid("communication parameters must be positive (noise power may be zero)"));
        }
        Ok(Self {
            p_n,
            p_cm_max,
            t1,
            l_slot,
            t_slots: model_dim.div_ceil(l_slot),
        })
    }

    /// Upload latency `t · T_1`.
    pub fn upload_seconds(&self) -> f64 {
        self.t_slots as f64 * self.t1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerScheme {
    Proposed,
    Vanilla,
    Reversed,
    Optimal,
}

impl PowerScheme {
    pub fn name(self) -> &'static str {
        match self {
            PowerScheme::Proposed => "proposed",
            PowerScheme::Vanilla => "vanilla",
            PowerScheme::Reversed => "reversed",
            PowerScheme::Optimal => "optimal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "proposed" => Some(PowerScheme::Proposed),
            "vanilla" => Some(PowerScheme::Vanilla),
            "reversed" => Some(PowerScheme::Reversed),
            "optimal" => Some(PowerScheme::Optimal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSchedule {
    pub scheme: PowerScheme,
    pub q: f64,
    pub rounds: usize,
}

impl PowerSchedule {
    pub fn new(scheme: PowerScheme, q: f64, rounds: usize) -> Result<Self> {
        if !(q > 0.0) || !q.is_finite() {
            return Err(Error::invalid("q must be positive"));
        }
        if rounds == 0 {
            return Err(Error::invalid("at least one round"));
        }
        Ok(Self { scheme, q, rounds })
    }
}

/// Denoising factor of a fixed schedule at round `r` (1-based).
///
/// The reversed schedule floors its argument at 1 so the last round keeps a
/// finite noise level.
pub fn schedule_c(schedule: &PowerSchedule, r: usize, p_n: f64) -> Result<f64> {
    if r == 0 || r > schedule.rounds {
        return Err(Error::invalid(format!("round {r} outside 1..={}", schedule.rounds)));
    }
    let arg = match schedule.scheme {
        PowerScheme::Proposed => r as f64,
        PowerScheme::Vanilla => schedule.rounds as f64,
        PowerScheme::Reversed => (schedule.rounds - r).max(1) as f64,
        PowerScheme::Optimal => {
            return Err(Error::invalid("the optimal schedule depends on the optimality gap; use optimal_c"))
        }
    };
    Ok(p_n * arg.sqrt() / schedule.q.sqrt())
}

/// Smallest gap accepted by [`optimal_c`].
pub const GAMMA_EPSILON: f64 = 1e-9;

/// Minimiser of the one-round objective bound:
/// `c* = sqrt(B · L · p_n² · η² / (2 σ γ_{r-1}))`.
/// A nonpositive gap is clamped to [`GAMMA_EPSILON`].
pub fn optimal_c(budget_b: f64, lipschitz: f64, p_n: f64, eta: f64, sigma: f64, gamma_prev: f64) -> Result<f64> {
    if !(budget_b > 0.0 && lipschitz > 0.0 && p_n > 0.0 && eta > 0.0 && sigma > 0.0) {
        return Err(Error::invalid("optimal_c needs positive B, L, p_n, eta and sigma"));
    }
    let gamma = if gamma_prev.is_nan() { GAMMA_EPSILON } else { gamma_prev.max(GAMMA_EPSILON) };
    Ok((budget_b * lipschitz * p_n * p_n * eta * eta / (2.0 * sigma * gamma)).sqrt())
}

/// Dimensionless communication cost `c_r · t · T_1 / p_n`.
pub fn unit_energy(c_r: f64, t_slots: usize, t1: f64, p_n: f64) -> f64 {
    c_r * t_slots as f64 * t1 / p_n
}

/// How the denoising factor maps to the Langevin temperature `τ_r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMapping {
    /// `τ_r = p_n / c_r`: the per-coordinate variance of the aggregation noise.
    #[default]
    Direct,
    /// `τ_r = p_n · η² / c_r`.
    EtaSquared,
}

pub fn tau_from_c(c_r: f64, p_n: f64, eta: f64, mapping: TauMapping) -> f64 {
    match mapping {
        TauMapping::Direct => p_n / c_r,
        TauMapping::EtaSquared => p_n * eta * eta / c_r,
    }
}
