//! A fast invariant suite for smoke-testing an installation. A [`Fault`] can
//! be injected to confirm that the checks actually detect breakage.

use std::fmt;

use crate::aircomp::{aggregate, CommParams};
use crate::budget::{audit_plan, feasibility_q, SystemParams};
use crate::error::Result;
use crate::metrics::smooth;
use crate::nn::{per_sample_gradients, per_sample_losses, Activation, ArchSpec, LossKind, Model, Sample};
use crate::rng::{purpose, StreamId};
use crate::sensing::{importance_weights, GradientBatch};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Aggregate with the denoising factor multiplied by this value while
    /// still expecting the nominal noise variance.
    NoiseScale(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<SelftestCheck>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

fn gradient_check(seed: u64) -> Result<SelftestCheck> {
    let arch = ArchSpec::new(vec![4, 6, 3], Activation::Tanh, LossKind::CrossEntropy)?;
    let mut rng = StreamId::new(seed, purpose::SELFTEST).rng();
    let model = Model::init(arch, &mut rng)?;
    let samples: Vec<Sample> = (0..4)
        .map(|i| Sample::new((0..4).map(|_| rng.random_range(-1.0..1.0)).collect(), i % 3))
        .collect();
    let grads = per_sample_gradients(&model, &samples)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..model.dim() {
        let mut plus = model.weights().to_vec();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        let lp = per_sample_losses(&model.with_weights(plus)?, &samples)?;
        let lm = per_sample_losses(&model.with_weights(minus)?, &samples)?;
        for (s, (a, b)) in lp.iter().zip(&lm).enumerate() {
            let fd = (a - b) / (2.0 * h);
            let an = grads.grad(s)[i];
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
        }
    }
    Ok(SelftestCheck {
        name: "gradient",
        passed: worst <= 1e-4,
        detail: format!("worst relative error {worst:.3e}"),
    })
}

fn unbiasedness_check() -> Result<SelftestCheck> {
    let batch = GradientBatch::from_rows(2, &[vec![3.0, -1.0], vec![0.5, 2.0]])?;
    let q = importance_weights(batch.norms())?;
    let b = batch.len() as f64;
    let b_bar = 2;
    let mut expected = [0.0; 2];
    for i in 0..2 {
        for j in 0..2 {
            let p = q[i] * q[j];
            let wi = 1.0 / (b * q[i]);
            let wj = 1.0 / (b * q[j]);
            for (c, e) in expected.iter_mut().enumerate() {
                *e += p * (wi * batch.grad(i)[c] + wj * batch.grad(j)[c]) / b_bar as f64;
            }
        }
    }
    let mean = batch.mean();
    let err = expected.iter().zip(&mean).map(|(a, m)| (a - m).abs()).fold(0.0, f64::max);
    Ok(SelftestCheck {
        name: "importance-sampling",
        passed: err <= 1e-12,
        detail: format!("max deviation of expected weighted mean {err:.3e}"),
    })
}

fn noise_check(fault: Fault, seed: u64) -> Result<SelftestCheck> {
    let (p_n, c_r, d) = (1e-3, 4e-2, 50_000);
    let scale = match fault {
        Fault::None => 1.0,
        Fault::NoiseScale(s) => s,
    };
    let zero = vec![0.0; d];
    let mut rng = StreamId::new(seed, purpose::SELFTEST).round(1).rng();
    let out = aggregate(&[&zero[..], &zero[..]], c_r * scale, p_n, &mut rng)?;
    let var = out.iter().map(|x| x * x).sum::<f64>() / d as f64;
    let target = p_n / c_r;
    let rel = (var / target - 1.0).abs();
    Ok(SelftestCheck {
        name: "aircomp-noise",
        passed: rel <= 0.03,
        detail: format!("variance {var:.4e} vs p_n/c_r {target:.4e} ({:.2}% off)", 100.0 * rel),
    })
}

fn budget_check() -> Result<SelftestCheck> {
    let params = SystemParams {
        t0: 1e-3,
        nu: 1e6,
        phi: 1e9,
        kappa: 1e-28,
        p_s: 0.1,
        p_s_min: 0.1,
        p_s_max: 1.0,
        t_max: 2.0,
        e_max: 1.0,
    };
    let comm = CommParams::new(1e-6, 1.0, 1e-3, 100, 709)?;
    let rounds = 10;
    let c = vec![1e-5; rounds];
    let h_floor = 0.1;
    let feas = feasibility_q(&c, &params, &comm, h_floor)?;
    let per_round = (feas.q / rounds as f64).floor() as usize;
    let channels = vec![vec![h_floor; 3]; rounds];
    let ok = audit_plan(&vec![per_round; rounds], &c, &channels, &params, &comm)?;
    let over = audit_plan(&vec![per_round + 10; rounds], &c, &channels, &params, &comm)?;
    Ok(SelftestCheck {
        name: "budget-audit",
        passed: ok.passed() && !over.passed() && over.first_failure().is_some(),
        detail: format!("Q={:.1} ({}), plan at Q passes, plan above Q fails", feas.q, feas.binding()),
    })
}

fn smoothing_check() -> Result<SelftestCheck> {
    let n = 25;
    let mut worst = 0.0f64;
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            total += smooth(&e, 10)?[i];
        }
        worst = worst.max((total - 1.0).abs());
    }
    Ok(SelftestCheck {
        name: "smoothing",
        passed: worst <= 1e-12,
        detail: format!("impulse responses sum to 1 within {worst:.1e}"),
    })
}

pub fn run(fault: Fault, seed: u64) -> Result<SelftestReport> {
    Ok(SelftestReport {
        checks: vec![
            gradient_check(seed)?,
            unbiasedness_check()?,
            noise_check(fault, seed)?,
            budget_check()?,
            smoothing_check()?,
        ],
    })
}
