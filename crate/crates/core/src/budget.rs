//! Latency and energy accounting, and the C1–C4 constraint audit.
//!
//! - C1: total latency `Σ_r T_r ≤ T_max`.
//! - C2: worst device's total energy `max_k Σ_r (E_s + E_cp + E_cm,k) ≤ E_max`.
//! - C3: peak communication power `0 < c_r ≤ P_cm_max · |h_k|²` for every device.
//! - C4: sensing power `P_s_min ≤ p_s ≤ P_s_max`.

use serde::{Deserialize, Serialize};

use crate::aircomp::{peak_power_ok, CommParams};
use crate::error::{Error, Result};

/// Relative slack granted to budget comparisons so that plans sitting exactly
/// on a budget boundary are not failed by rounding.
pub const AUDIT_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Sampling interval `T_0` (s per sample).
    pub t0: f64,
    /// CPU cycles per sample `ν`.
    pub nu: f64,
    /// CPU frequency `φ` (Hz).
    pub phi: f64,
    /// Effective switched capacitance `κ`.
    pub kappa: f64,
    /// Sensing power `p_s` (W).
    pub p_s: f64,
    pub p_s_min: f64,
    pub p_s_max: f64,
    /// Total latency budget (s).
    pub t_max: f64,
    /// Per-device energy budget (J).
    pub e_max: f64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t0", self.t0),
            ("nu", self.nu),
            ("phi", self.phi),
            ("kappa", self.kappa),
            ("p_s", self.p_s),
            ("p_s_min", self.p_s_min),
            ("p_s_max", self.p_s_max),
            ("t_max", self.t_max),
            ("e_max", self.e_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Seconds of sensing plus computation per sample, `T_0 + ν/φ`.
    pub fn seconds_per_sample(&self) -> f64 {
        self.t0 + self.nu / self.phi
    }

    /// Joules of computation per sample, `κ ν φ²`.
    pub fn compute_joules_per_sample(&self) -> f64 {
        self.kappa * self.nu * self.phi * self.phi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Latency {
    pub sensing: f64,
    pub compute: f64,
    pub comm: f64,
    pub total: f64,
}

/// `T_s = T_0 b`, `T_cp = b ν / φ`, `T_cm = t T_1`.
pub fn round_latency(b: usize, params: &SystemParams, comm: &CommParams) -> Latency {
    let b = b as f64;
    let sensing = params.t0 * b;
    let compute = b * params.nu / params.phi;
    let comm = comm.upload_seconds();
    Latency {
        sensing,
        compute,
        comm,
        total: compute + comm + sensing,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Energy {
    pub sensing: f64,
    pub compute: f64,
    pub comm: f64,
}

impl Energy {
    pub fn total(&self) -> f64 {
        self.sensing + self.compute + self.comm
    }
}

/// `E_s = T_0 b p_s`, `E_cp = κ ν φ² b`, `E_cm = t T_1 c_r / |h|²`.
pub fn round_energy(b: usize, c_r: f64, h_mag: f64, params: &SystemParams, comm: &CommParams) -> Energy {
    let b = b as f64;
    Energy {
        sensing: params.t0 * b * params.p_s,
        compute: params.compute_joules_per_sample() * b,
        comm: comm.upload_seconds() * c_r / (h_mag * h_mag),
    }
}

/// Everything spent in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundEntry {
    pub round: usize,
    pub c_r: f64,
    /// Raw samples acquired per device.
    pub batch: Vec<usize>,
    pub h_mag: Vec<f64>,
    /// Synchronous round: the slowest device sets the latency.
    pub latency: Latency,
    pub energy: Vec<Energy>,
}

impl RoundEntry {
    pub fn compute(
        round: usize,
        c_r: f64,
        batch: Vec<usize>,
        h_mag: Vec<f64>,
        params: &SystemParams,
        comm: &CommParams,
    ) -> Result<Self> {
        if batch.len() != h_mag.len() {
            return Err(Error::DimensionMismatch {
                context: "per-device batch sizes",
                expected: h_mag.len(),
                got: batch.len(),
            });
        }
        let slowest = batch.iter().copied().max().unwrap_or(0);
        let energy = batch
            .iter()
            .zip(&h_mag)
            .map(|(&b, &h)| round_energy(b, c_r, h, params, comm))
            .collect();
        Ok(Self {
            round,
            c_r,
            latency: round_latency(slowest, params, comm),
            batch,
            h_mag,
            energy,
        })
    }
}

/// Append-only ledger with running totals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundLedger {
    entries: Vec<RoundEntry>,
    cum_latency: f64,
    cum_device_energy: Vec<f64>,
    cum_by_category: Energy,
    cum_raw_samples: usize,
}

impl RoundLedger {
    pub fn new(devices: usize) -> Self {
        Self {
            cum_device_energy: vec![0.0; devices],
            ..Default::default()
        }
    }

    pub fn append(&mut self, entry: RoundEntry) -> Result<()> {
        if entry.energy.len() != self.cum_device_energy.len() {
            return Err(Error::DimensionMismatch {
                context: "ledger devices",
                expected: self.cum_device_energy.len(),
                got: entry.energy.len(),
            });
        }
        self.cum_latency += entry.latency.total;
        for (acc, e) in self.cum_device_energy.iter_mut().zip(&entry.energy) {
            *acc += e.total();
        }
        for e in &entry.energy {
            self.cum_by_category.sensing += e.sensing;
            self.cum_by_category.compute += e.compute;
            self.cum_by_category.comm += e.comm;
        }
        self.cum_raw_samples += entry.batch.iter().sum::<usize>();
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[RoundEntry] {
        &self.entries
    }

    pub fn devices(&self) -> usize {
        self.cum_device_energy.len()
    }

    pub fn cum_latency(&self) -> f64 {
        self.cum_latency
    }

    pub fn cum_device_energy(&self) -> &[f64] {
        &self.cum_device_energy
    }

    /// Summed over devices.
    pub fn cum_by_category(&self) -> Energy {
        self.cum_by_category
    }

    /// Summed over devices.
    pub fn cum_raw_samples(&self) -> usize {
        self.cum_raw_samples
    }
}

/// The reduced feasibility region for the total per-device sample budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub latency_branch: f64,
    pub energy_branch: f64,
    /// `max(0, min(latency_branch, energy_branch))`.
    pub q: f64,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        self.q > 0.0
    }

    pub fn binding(&self) -> &'static str {
        if self.latency_branch <= self.energy_branch {
            "latency"
        } else {
            "energy"
        }
    }
}

/// `Q = min{(T_max − t R T_1)/(T_0 + ν/φ), (E_max − Σ_r t T_1 c_r/|h_floor|²)/(P_s_min T_0 + κ ν φ²)}`.
///
/// Nonpositive numerators give `Q = 0`, which [`Feasibility::is_feasible`]
/// reports as infeasible.
pub fn feasibility_q(c_schedule: &[f64], params: &SystemParams, comm: &CommParams, h_floor: f64) -> Result<Feasibility> {
    if c_schedule.is_empty() {
        return Err(Error::invalid("empty power schedule"));
    }
    if !(h_floor > 0.0) {
        return Err(Error::invalid("h_floor must be positive"));
    }
    let rounds = c_schedule.len() as f64;
    let upload = comm.upload_seconds();
    let latency_num = params.t_max - rounds * upload;
    let comm_energy: f64 = c_schedule.iter().map(|c| upload * c / (h_floor * h_floor)).sum();
    let energy_num = params.e_max - comm_energy;
    let latency_branch = if latency_num.is_infinite() {
        f64::INFINITY
    } else {
        latency_num / params.seconds_per_sample()
    };
    let energy_branch = if energy_num.is_infinite() {
        f64::INFINITY
    } else {
        energy_num / (params.p_s_min * params.t0 + params.compute_joules_per_sample())
    };
    let q = latency_branch.min(energy_branch).max(0.0);
    Ok(Feasibility {
        latency_branch,
        energy_branch,
        q,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintCheck {
    pub name: &'static str,
    pub first_violation: Option<usize>,
    /// Budget minus usage at the end (or at the violating round).
    pub slack: f64,
    pub detail: String,
}

impl ConstraintCheck {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub checks: [ConstraintCheck; 4],
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(ConstraintCheck::passed)
    }

    pub fn check(&self, name: &str) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// The earliest violation across constraints, ties broken C1..C4.
    pub fn first_failure(&self) -> Option<(&'static str, usize)> {
        self.checks
            .iter()
            .filter_map(|c| c.first_violation.map(|r| (c.name, r)))
            .min_by_key(|&(_, r)| r)
    }
}

impl std::fmt::Display for AuditReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            match c.first_violation {
                None => writeln!(f, "{}: pass (slack {:.6e}) {}", c.name, c.slack, c.detail)?,
                Some(r) => writeln!(f, "{}: FAIL at round {r} (slack {:.6e}) {}", c.name, c.slack, c.detail)?,
            }
        }
        Ok(())
    }
}

fn within(value: f64, limit: f64) -> bool {
    value <= limit + AUDIT_REL_TOL * limit.abs()
}

/// Check C1–C4 over every round recorded in the ledger.
pub fn audit(ledger: &RoundLedger, params: &SystemParams, comm: &CommParams) -> AuditReport {
    let mut latency = 0.0;
    let mut c1 = None;
    let mut device_energy = vec![0.0; ledger.devices()];
    let mut c2 = None;
    let mut c3 = None;
    let mut c3_detail = String::new();
    let mut c1_slack = params.t_max;
    let mut c2_slack = params.e_max;
    for entry in ledger.entries() {
        latency += entry.latency.total;
        if c1.is_none() && !within(latency, params.t_max) {
            c1 = Some(entry.round);
            c1_slack = params.t_max - latency;
        }
        for (acc, e) in device_energy.iter_mut().zip(&entry.energy) {
            *acc += e.total();
        }
        let worst = device_energy.iter().copied().fold(0.0, f64::max);
        if c2.is_none() && !within(worst, params.e_max) {
            c2 = Some(entry.round);
            c2_slack = params.e_max - worst;
        }
        if c3.is_none() {
            if let Some((k, h)) = entry
                .h_mag
                .iter()
                .enumerate()
                .find(|&(_, &h)| !peak_power_ok(entry.c_r, h, comm.p_cm_max))
            {
                c3 = Some(entry.round);
                c3_detail = format!(
                    "device {k}: c_r={:.6e} exceeds P_max|h|^2={:.6e}",
                    entry.c_r,
                    comm.p_cm_max * h * h
                );
            }
        }
    }
    if c1.is_none() {
        c1_slack = params.t_max - latency;
    }
    if c2.is_none() {
        c2_slack = params.e_max - device_energy.iter().copied().fold(0.0, f64::max);
    }
    let first_round = ledger.entries().first().map_or(1, |e| e.round);
    let c4_ok = params.p_s_min <= params.p_s && params.p_s <= params.p_s_max;
    AuditReport {
        checks: [
            ConstraintCheck {
                name: "C1",
                first_violation: c1,
                slack: c1_slack,
                detail: format!("latency {latency:.6e} s of {:.6e} s", params.t_max),
            },
            ConstraintCheck {
                name: "C2",
                first_violation: c2,
                slack: c2_slack,
                detail: format!("worst device energy budget {:.6e} J", params.e_max),
            },
            ConstraintCheck {
                name: "C3",
                first_violation: c3,
                slack: 0.0,
                detail: c3_detail,
            },
            ConstraintCheck {
                name: "C4",
                first_violation: if c4_ok { None } else { Some(first_round) },
                slack: (params.p_s - params.p_s_min).min(params.p_s_max - params.p_s),
                detail: format!(
                    "p_s={:.6e} in [{:.6e}, {:.6e}]",
                    params.p_s, params.p_s_min, params.p_s_max
                ),
            },
        ],
    }
}

/// Build a ledger from a per-round plan (same batch on every device) and
/// audit it.
pub fn audit_plan(
    batches: &[usize],
    c_schedule: &[f64],
    channels: &[Vec<f64>],
    params: &SystemParams,
    comm: &CommParams,
) -> Result<AuditReport> {
    if batches.len() != c_schedule.len() || batches.len() != channels.len() {
        return Err(Error::invalid("plan, schedule and channel history must cover the same rounds"));
    }
    let devices = channels.first().map_or(0, Vec::len);
    let mut ledger = RoundLedger::new(devices);
    for (r, ((&b, &c), h)) in batches.iter().zip(c_schedule).zip(channels).enumerate() {
        ledger.append(RoundEntry::compute(r + 1, c, vec![b; h.len()], h.clone(), params, comm)?)?;
    }
    Ok(audit(&ledger, params, comm))
}
