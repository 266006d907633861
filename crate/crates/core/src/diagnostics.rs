//! Calibration of the theory constants on a short run, and empirical checks
//! of the bounds against replayed rounds.

use rand_distr::{Distribution, StandardNormal};

use crate::batch::l2_norm;
use crate::config::{ExperimentConfig, Scheme};
use crate::dataset::SampleStream;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fedloop::{RunState, Simulation};
use crate::metrics::validation_loss;
use crate::nn::{full_gradient, per_sample_gradients, per_sample_losses, Model};
use crate::rng::{purpose, StreamId};
use crate::theory::{estimate_constants, gen_error_bound, loss_descent_bound, ProbePair, TheoryConstants, TracePoint};

/// Training samples used to estimate per-sample gradient moments.
pub const PROBE_SAMPLES: usize = 256;
/// Random directions probed around each trace point for the Lipschitz estimate.
pub const PROBE_DIRECTIONS: usize = 4;
/// Probe step relative to `max(‖w‖, 1)`.
pub const PROBE_RADIUS: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayCheck {
    /// The round being replayed.
    pub round: usize,
    /// Mean of `F(w_r) − F(w_{r−1})` over the replay draws.
    pub realized: f64,
    pub bound: f64,
    pub eta_ok: bool,
}

impl ReplayCheck {
    pub fn holds(&self) -> bool {
        self.realized <= self.bound
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenCheck {
    pub round: usize,
    /// `|holdout loss − training loss|`.
    pub gap: f64,
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub scheme: Scheme,
    pub constants: TheoryConstants,
    pub trace: Vec<TracePoint>,
    /// Round index of each trace point.
    pub trace_rounds: Vec<usize>,
    pub replay: Vec<ReplayCheck>,
    pub gen: Vec<GenCheck>,
    /// Cumulative generalization bound after every round.
    pub gen_bound: Vec<f64>,
}

impl Calibration {
    /// Fraction of replayed rounds whose realized change respects the bound.
    pub fn descent_pass_rate(&self) -> f64 {
        if self.replay.is_empty() {
            return 0.0;
        }
        self.replay.iter().filter(|c| c.holds()).count() as f64 / self.replay.len() as f64
    }

    /// Whether the step size satisfied the validity cap at every replayed round.
    pub fn eta_verified(&self) -> bool {
        self.replay.iter().all(|c| c.eta_ok)
    }

    pub fn gen_violations(&self) -> usize {
        self.gen.iter().filter(|g| g.gap > g.bound).count()
    }
}

struct ProbeStats {
    mean_grad_sq: f64,
    variance: f64,
    train_loss: f64,
}

fn training_probe(sim: &Simulation, state: &RunState) -> Result<ProbeStats> {
    let cfg = sim.config();
    let id = StreamId::new(cfg.seed, purpose::PROBE)
        .repeat(state.repeat as u64)
        .round(state.round as u64);
    let mut stream = SampleStream::new(state.source(0).clone(), id);
    let samples = stream.draw(PROBE_SAMPLES)?;
    let batch = per_sample_gradients(&state.model, &samples)?;
    let mean = batch.mean();
    let n = batch.len() as f64;
    let variance = batch
        .rows()
        .map(|row| row.iter().zip(&mean).map(|(g, m)| (g - m) * (g - m)).sum::<f64>())
        .sum::<f64>()
        / (n - 1.0);
    let train_loss = per_sample_losses(&state.model, &samples)?.iter().sum::<f64>() / n;
    Ok(ProbeStats {
        mean_grad_sq: l2_norm(&mean).powi(2),
        variance,
        train_loss,
    })
}

fn trace_point(sim: &Simulation, state: &RunState) -> Result<(TracePoint, ProbeStats)> {
    let holdout = sim.holdout();
    let losses = per_sample_losses(&state.model, holdout)?;
    let loss = losses.iter().sum::<f64>() / losses.len() as f64;
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let probe = training_probe(sim, state)?;
    Ok((
        TracePoint {
            weights: state.model.weights().to_vec(),
            loss,
            grad: full_gradient(&state.model, holdout)?,
            mean_grad_sq: probe.mean_grad_sq,
            sample_variance: probe.variance,
            loss_range: hi - lo,
        },
        probe,
    ))
}

fn random_probes(sim: &Simulation, point: &TracePoint, model: &Model, index: usize) -> Result<Vec<ProbePair>> {
    let cfg = sim.config();
    let mut rng = StreamId::new(cfg.seed, purpose::PROBE).device(1).round(index as u64).rng();
    let radius = PROBE_RADIUS * l2_norm(&point.weights).max(1.0);
    (0..PROBE_DIRECTIONS)
        .map(|_| {
            let mut u: Vec<f64> = (0..point.weights.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = l2_norm(&u);
            u.iter_mut().for_each(|x| *x *= radius / n);
            let w_b: Vec<f64> = point.weights.iter().zip(&u).map(|(w, d)| w + d).collect();
            let g_b = full_gradient(&model.with_weights(w_b.clone())?, sim.holdout())?;
            Ok(ProbePair {
                w_a: point.weights.clone(),
                g_a: point.grad.clone(),
                w_b,
                g_b,
            })
        })
        .collect()
}

/// Run the calibration scheme for the configured number of rounds, estimate
/// the constants from its trace, then replay each evaluated round with fresh
/// draws to check the descent bound.
pub fn calibrate(config: &ExperimentConfig, exec: Exec) -> Result<Calibration> {
    let scheme = Scheme::parse(&config.diagnostics.calibration_scheme).ok_or_else(|| {
        Error::config(
            "diagnostics.calibration_scheme",
            format!("unknown scheme `{}`", config.diagnostics.calibration_scheme),
        )
    })?;
    let sim = Simulation::new(config.clone(), exec)?;
    let rounds = config.diagnostics.calibration_rounds.min(config.rounds);
    let period = config.eval_period_rounds;

    let mut state = sim.init_state(scheme, 0)?;
    let mut snapshots: Vec<RunState> = Vec::new();
    let mut trace = Vec::new();
    let mut probes_train = Vec::new();
    let mut variances = Vec::new();
    let mut taus = Vec::new();
    let mut batches = Vec::new();
    for r in 0..=rounds {
        if r % period == 0 && r < rounds || r == rounds {
            let (tp, probe) = trace_point(&sim, &state)?;
            trace.push(tp);
            probes_train.push(probe.train_loss);
            snapshots.push(state.clone());
        }
        if r == rounds {
            break;
        }
        let report = sim.run_round(&mut state)?;
        variances.push(report.sample_variance);
        taus.push(report.tau);
        batches.push(report.effective_batch);
    }

    let probes: Vec<ProbePair> = exec
        .try_map(trace.len(), |i| random_probes(&sim, &trace[i], &state.model, i))?
        .into_iter()
        .flatten()
        .chain(trace.windows(2).map(|w| ProbePair {
            w_a: w[0].weights.clone(),
            g_a: w[0].grad.clone(),
            w_b: w[1].weights.clone(),
            g_b: w[1].grad.clone(),
        }))
        .collect();
    let budget = config.sample_budget();
    let constants = estimate_constants(&trace, &probes, config.power.optimal.f_star, budget, config.devices, config.sensing.b_max as f64)?;

    let eta = config.learning_rate;
    let k = config.devices;
    let draws = config.diagnostics.replay_draws as u64;
    let replay = exec.try_map(snapshots.len(), |i| -> Result<Option<ReplayCheck>> {
        let snap = &snapshots[i];
        if snap.round >= rounds {
            return Ok(None);
        }
        let before = trace[i].loss;
        let mut total = 0.0;
        let mut tau = 0.0;
        let mut b = 0.0;
        for d in 1..=draws {
            let step = sim.step(snap, d)?;
            total += validation_loss(&step.model, sim.holdout(), Exec::Sequential)? - before;
            tau = step.report.tau;
            b = step.report.effective_batch;
        }
        let g = l2_norm(&trace[i].grad).powi(2);
        let bound = loss_descent_bound(g, tau, b, &constants, eta, k);
        Ok(Some(ReplayCheck {
            round: snap.round + 1,
            realized: total / draws as f64,
            bound: bound.value,
            eta_ok: bound.eta_ok,
        }))
    })?;
    let replay: Vec<ReplayCheck> = replay.into_iter().flatten().collect();

    let gen_bound = gen_error_bound(&variances, &taus, &batches, &constants, eta, k)?.cumulative;
    let gen = snapshots
        .iter()
        .zip(&trace)
        .zip(&probes_train)
        .filter(|((s, _), _)| s.round > 0)
        .map(|((s, t), &train)| GenCheck {
            round: s.round,
            gap: (t.loss - train).abs(),
            bound: gen_bound[s.round - 1],
        })
        .collect();

    Ok(Calibration {
        scheme,
        constants,
        trace_rounds: snapshots.iter().map(|s| s.round).collect(),
        trace,
        replay,
        gen,
        gen_bound,
    })
}
