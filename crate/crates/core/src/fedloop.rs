//! The federated training loop: sensing, over-the-air aggregation, the noisy
//! update, and cost accounting, round by round.

use std::sync::Arc;

use crate::aircomp::{
    aggregate, draw_channel, optimal_c, peak_power_ok, schedule_c, tau_from_c, unit_energy, CommParams,
    PowerSchedule, PowerScheme,
};
use crate::budget::{audit, AuditReport, RoundEntry, RoundLedger, SystemParams, AUDIT_REL_TOL};
use crate::config::{DataConfig, ExperimentConfig, Scheme, SensingMode};
use crate::diagnostics::{calibrate, Calibration};
use crate::dataset::{device_pool, holdout, load_idx, DataSource, SampleStream, SyntheticTaskSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::metrics::{validation_loss, Diagnostics, MetricsRecord, MetricsRow, RunMeta};
use crate::nn::{apply_update, full_gradient, ArchSpec, Model, Sample};
use crate::rng::{purpose, StreamId};
use crate::sensing::{adaptive_collect, fixed_collect, GradientBatch, LiveAcquirer, SensingControllerState};
use crate::theory::{gen_error_increment, loss_descent_bound, TheoryConstants};

/// Where training data comes from, before it is bound to a repeat.
#[derive(Debug, Clone)]
enum DataPlan {
    Fresh(Arc<SyntheticTaskSpec>),
    Pools(Arc<SyntheticTaskSpec>, usize),
    Shards(Vec<Arc<Vec<Sample>>>),
}

/// Everything a run needs that does not change across rounds, schemes or
/// repeats.
#[derive(Debug, Clone)]
pub struct Simulation {
    config: ExperimentConfig,
    arch: ArchSpec,
    comm: CommParams,
    system: SystemParams,
    holdout: Arc<Vec<Sample>>,
    data: DataPlan,
    exec: Exec,
    constants: Option<TheoryConstants>,
}

/// Mutable state of one run.
#[derive(Debug, Clone)]
pub struct RunState {
    pub scheme: Scheme,
    pub repeat: usize,
    /// Rounds completed.
    pub round: usize,
    pub model: Model,
    pub sensing: Vec<SensingControllerState>,
    pub ledger: RoundLedger,
    pub record: MetricsRecord,
    /// Optimality-gap estimate from the latest evaluation.
    pub gamma: f64,
    pub cum_unit_energy: f64,
    pub cum_gen_bound: f64,
    sources: Vec<DataSource>,
}

impl RunState {
    /// Training data of device `k`.
    pub fn source(&self, k: usize) -> &DataSource {
        &self.sources[k]
    }
}

/// What happened in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub c_r: f64,
    pub tau: f64,
    pub unit_energy: f64,
    /// Raw samples acquired per device.
    pub raw: Vec<usize>,
    /// Mean length of the batches that entered the local gradients.
    pub effective_batch: f64,
    /// Mean over devices of the per-sample variance of the weighted rows.
    pub sample_variance: f64,
    /// The aggregated noisy gradient applied to the model.
    pub update: Vec<f64>,
}

/// The result of advancing a state by one round, before it is committed.
#[derive(Debug, Clone)]
pub struct Step {
    pub model: Model,
    pub sensing: Vec<SensingControllerState>,
    pub entry: RoundEntry,
    pub report: RoundReport,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scheme: Scheme,
    pub repeat: usize,
    pub record: MetricsRecord,
    pub ledger: RoundLedger,
    pub audit: AuditReport,
    pub final_model: Model,
}

/// Per-sample variance `Σ‖x_j − x̄‖²/(n − 1)` of the rows `w_j g_j`.
pub fn weighted_row_variance(batch: &GradientBatch) -> f64 {
    let n = batch.len();
    if n < 2 {
        return 0.0;
    }
    let mean = batch.weighted_mean();
    let mut total = 0.0;
    for (row, &w) in batch.rows().zip(batch.weights()) {
        for (g, m) in row.iter().zip(&mean) {
            let d = w * g - m;
            total += d * d;
        }
    }
    total / (n - 1) as f64
}

impl Simulation {
    pub fn new(config: ExperimentConfig, exec: Exec) -> Result<Self> {
        config.validate()?;
        let arch = config.arch()?;
        let comm = config.comm_params()?;
        let system = config.system_params();
        let (holdout, data) = match &config.data {
            DataConfig::Synthetic(s) => {
                let spec = Arc::new(SyntheticTaskSpec::generate(
                    config.seed,
                    s.class_count,
                    s.feature_dim,
                    s.noise_std,
                    s.label_noise_prob,
                    s.min_mean_separation,
                )?);
                let ho = holdout(&spec, config.holdout_size, config.seed);
                let plan = match s.pool_size {
                    Some(n) => DataPlan::Pools(spec, n),
                    None => DataPlan::Fresh(spec),
                };
                (ho, plan)
            }
            DataConfig::Idx(p) => {
                let train = load_idx(&p.train_images, &p.train_labels)?;
                let mut test = load_idx(&p.test_images, &p.test_labels)?;
                test.truncate(config.holdout_size);
                let k = config.devices;
                let shards: Vec<Arc<Vec<Sample>>> = (0..k)
                    .map(|d| Arc::new(train.iter().skip(d).step_by(k).cloned().collect()))
                    .collect();
                if shards.iter().any(|s| s.is_empty()) {
                    return Err(Error::InsufficientData(format!(
                        "{} training samples cannot feed {k} devices",
                        train.len()
                    )));
                }
                (test, DataPlan::Shards(shards))
            }
        };
        if holdout.is_empty() {
            return Err(Error::InsufficientData("empty holdout set".into()));
        }
        if let Some(s) = holdout.iter().find(|s| s.features.len() != arch.input_dim()) {
            return Err(Error::DimensionMismatch {
                context: "sample features vs model input",
                expected: arch.input_dim(),
                got: s.features.len(),
            });
        }
        Ok(Self {
            config,
            arch,
            comm,
            system,
            holdout: Arc::new(holdout),
            data,
            exec,
            constants: None,
        })
    }

    /// Attach frozen theory constants; evaluation rows then carry diagnostics.
    pub fn with_constants(mut self, constants: TheoryConstants) -> Self {
        self.constants = Some(constants);
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn comm(&self) -> &CommParams {
        &self.comm
    }

    pub fn system(&self) -> &SystemParams {
        &self.system
    }

    pub fn holdout(&self) -> &[Sample] {
        &self.holdout
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn constants(&self) -> Option<&TheoryConstants> {
        self.constants.as_ref()
    }

    fn sources(&self, repeat: usize) -> Vec<DataSource> {
        let k = self.config.devices;
        match &self.data {
            DataPlan::Fresh(spec) => vec![DataSource::Synthetic(spec.clone()); k],
            DataPlan::Pools(spec, n) => (0..k)
                .map(|d| {
                    DataSource::Pool(Arc::new(device_pool(spec, *n, self.config.seed, repeat as u64, d as u64)))
                })
                .collect(),
            DataPlan::Shards(shards) => shards.iter().map(|s| DataSource::Pool(s.clone())).collect(),
        }
    }

    /// Initial weights of `repeat`, shared by every scheme.
    pub fn initial_model(&self, repeat: usize) -> Result<Model> {
        let mut rng = StreamId::new(self.config.seed, purpose::INIT).repeat(repeat as u64).rng();
        Model::init(self.arch.clone(), &mut rng)
    }

    /// `max(loss − F*, floor)`.
    pub fn estimate_gamma(&self, loss: f64) -> f64 {
        let opt = &self.config.power.optimal;
        (loss - opt.f_star).max(opt.gamma_floor)
    }

    pub fn init_state(&self, scheme: Scheme, repeat: usize) -> Result<RunState> {
        let sys = &self.system;
        if !(sys.p_s_min <= sys.p_s && sys.p_s <= sys.p_s_max) {
            return Err(Error::BudgetViolation {
                constraint: "C4",
                round: 0,
                detail: format!("sensing power {} outside [{}, {}]", sys.p_s, sys.p_s_min, sys.p_s_max),
            });
        }
        let s = &self.config.sensing;
        let controller = SensingControllerState::new(s.theta_bar_init, s.alpha, s.b_min, s.b_max)?;
        let model = self.initial_model(repeat)?;
        let loss = validation_loss(&model, &self.holdout, self.exec)?;
        let mut record = MetricsRecord::new(RunMeta {
            scheme: scheme.name(),
            repeat,
            q: self.config.power.q,
            seed: self.config.seed,
        });
        let diagnostics = match &self.constants {
            Some(_) => Some(Diagnostics {
                grad_norm_sq: crate::batch::l2_norm(&full_gradient(&model, &self.holdout)?).powi(2),
                ..Default::default()
            }),
            None => None,
        };
        record.push(MetricsRow {
            round: 0,
            validation_loss: loss,
            theta_bar: controller.theta_bar,
            diagnostics,
            ..Default::default()
        })?;
        Ok(RunState {
            scheme,
            repeat,
            round: 0,
            model,
            sensing: vec![controller; self.config.devices],
            ledger: RoundLedger::new(self.config.devices),
            record,
            gamma: self.estimate_gamma(loss),
            cum_unit_energy: 0.0,
            cum_gen_bound: 0.0,
            sources: self.sources(repeat),
        })
    }

    /// `(c_r, c_r / p_n)` for round `r`.
    fn denoising(&self, scheme: PowerScheme, r: usize, gamma: f64) -> Result<(f64, f64)> {
        let p_n = self.comm.p_n;
        match scheme {
            PowerScheme::Optimal => {
                let opt = &self.config.power.optimal;
                let c = optimal_c(
                    self.config.sample_budget(),
                    opt.lipschitz,
                    p_n,
                    self.config.learning_rate,
                    opt.sigma,
                    gamma,
                )?;
                Ok((c, c / p_n))
            }
            _ => {
                let sched = PowerSchedule::new(scheme, self.config.power.q, self.config.rounds)?;
                Ok((schedule_c(&sched, r, p_n)?, schedule_c(&sched, r, 1.0)?))
            }
        }
    }

    /// Compute round `state.round + 1` without committing it. `draw` selects
    /// an alternate realization of every random stream; 0 is the run itself.
    pub fn step(&self, state: &RunState, draw: u64) -> Result<Step> {
        let r = state.round + 1;
        if r > self.config.rounds {
            return Err(Error::invalid(format!("run already finished {} rounds", self.config.rounds)));
        }
        let cfg = &self.config;
        let seed = cfg.seed;
        let repeat = state.repeat as u64;
        let key = |p: &'static str| StreamId::new(seed, p).repeat(repeat).round(r as u64).draw(draw);
        let mode = state.scheme.sensing;
        let b_max = cfg.sensing.b_max;

        let locals = self.exec.try_map(cfg.devices, |k| -> Result<_> {
            let mut stream = SampleStream::new(state.sources[k].clone(), key(purpose::DATA).device(k as u64));
            let mut acq = LiveAcquirer::new(&state.model, &mut stream);
            let (batch, controller) = match mode {
                SensingMode::Reweight => {
                    let mut rng = key(purpose::RESAMPLE).device(k as u64).rng();
                    let c = adaptive_collect(&mut acq, state.sensing[k], &mut rng)?;
                    (c.batch, c.state)
                }
                SensingMode::Baseline => (fixed_collect(&mut acq, b_max)?, state.sensing[k]),
            };
            Ok((batch.weighted_mean(), batch.raw_count(), batch.len(), weighted_row_variance(&batch), controller))
        })?;

        let (c_r, ratio) = self.denoising(state.scheme.power, r, state.gamma)?;
        let p_n = self.comm.p_n;
        let channel = draw_channel(cfg.devices, cfg.comm.h_floor, &mut key(purpose::CHANNEL).rng())?;
        let grads: Vec<&[f64]> = locals.iter().map(|l| l.0.as_slice()).collect();
        let update = aggregate(&grads, c_r, p_n, &mut key(purpose::NOISE).rng())?;
        let model = apply_update(&state.model, &update, cfg.learning_rate)?;

        let raw: Vec<usize> = locals.iter().map(|l| l.1).collect();
        let entry = RoundEntry::compute(r, c_r, raw.clone(), channel.h_mag.clone(), &self.system, &self.comm)?;
        let k = cfg.devices as f64;
        let tau = if p_n == 0.0 {
            0.0
        } else {
            tau_from_c(c_r, p_n, cfg.learning_rate, cfg.power.tau_mapping)
        };
        Ok(Step {
            model,
            sensing: locals.iter().map(|l| l.4).collect(),
            entry,
            report: RoundReport {
                round: r,
                c_r,
                tau,
                unit_energy: ratio * unit_energy(1.0, self.comm.t_slots, self.comm.t1, 1.0),
                effective_batch: locals.iter().map(|l| l.2 as f64).sum::<f64>() / k,
                sample_variance: locals.iter().map(|l| l.3).sum::<f64>() / k,
                raw,
                update,
            },
        })
    }

    fn check_round(&self, state: &RunState, entry: &RoundEntry) -> Result<()> {
        let r = entry.round;
        if self.comm.p_n > 0.0 {
            if let Some((k, h)) = entry
                .h_mag
                .iter()
                .enumerate()
                .find(|&(_, &h)| !peak_power_ok(entry.c_r, h, self.comm.p_cm_max))
            {
                return Err(Error::BudgetViolation {
                    constraint: "C3",
                    round: r,
                    detail: format!(
                        "device {k}: c_r={:e} exceeds P_max|h|^2={:e}",
                        entry.c_r,
                        self.comm.p_cm_max * h * h
                    ),
                });
            }
        }
        let limit = |x: f64| x * (1.0 + AUDIT_REL_TOL);
        let latency = state.ledger.cum_latency() + entry.latency.total;
        if latency > limit(self.system.t_max) {
            return Err(Error::BudgetViolation {
                constraint: "C1",
                round: r,
                detail: format!("cumulative latency {latency:e} s exceeds {:e} s", self.system.t_max),
            });
        }
        for (k, (acc, e)) in state.ledger.cum_device_energy().iter().zip(&entry.energy).enumerate() {
            let total = acc + e.total();
            if total > limit(self.system.e_max) {
                return Err(Error::BudgetViolation {
                    constraint: "C2",
                    round: r,
                    detail: format!("device {k} energy {total:e} J exceeds {:e} J", self.system.e_max),
                });
            }
        }
        Ok(())
    }

    fn is_eval_round(&self, r: usize) -> bool {
        r.is_multiple_of(self.config.eval_period_rounds) || r == self.config.rounds
    }

    /// Advance one round, enforce the budgets, and record an evaluation row
    /// when the round falls on the evaluation grid.
    pub fn run_round(&self, state: &mut RunState) -> Result<RoundReport> {
        let step = self.step(state, 0)?;
        self.check_round(state, &step.entry)?;
        let report = step.report;
        let r = report.round;
        state.ledger.append(step.entry)?;
        state.model = step.model;
        state.sensing = step.sensing;
        state.round = r;
        state.cum_unit_energy += report.unit_energy;
        let eta = self.config.learning_rate;
        let k = self.config.devices;
        if let Some(c) = &self.constants {
            state.cum_gen_bound +=
                gen_error_increment(report.sample_variance, report.tau, report.effective_batch, c, eta, k);
        }
        if self.is_eval_round(r) {
            let loss = validation_loss(&state.model, &self.holdout, self.exec)?;
            state.gamma = self.estimate_gamma(loss);
            let diagnostics = match &self.constants {
                Some(c) => {
                    let g = crate::batch::l2_norm(&full_gradient(&state.model, &self.holdout)?).powi(2);
                    Some(Diagnostics {
                        grad_norm_sq: g,
                        grad_variance: report.sample_variance,
                        descent_bound: loss_descent_bound(g, report.tau, report.effective_batch, c, eta, k).value,
                        gen_error_bound: state.cum_gen_bound,
                    })
                }
                None => None,
            };
            let cat = state.ledger.cum_by_category();
            state.record.push(MetricsRow {
                round: r,
                validation_loss: loss,
                cum_unit_energy: state.cum_unit_energy,
                cum_raw_samples: state.ledger.cum_raw_samples() as u64,
                cum_energy_sensing_j: cat.sensing,
                cum_energy_compute_j: cat.compute,
                cum_energy_comm_j: cat.comm,
                cum_latency_s: state.ledger.cum_latency(),
                theta_bar: state.sensing.iter().map(|s| s.theta_bar).sum::<f64>() / k as f64,
                c_r: report.c_r,
                b_raw: report.raw.iter().sum::<usize>() as f64 / k as f64,
                diagnostics,
            })?;
        }
        Ok(report)
    }

    /// One full run of `scheme` for `repeat`.
    pub fn run(&self, scheme: Scheme, repeat: usize) -> Result<RunOutput> {
        let mut state = self.init_state(scheme, repeat)?;
        for _ in 0..self.config.rounds {
            self.run_round(&mut state)?;
        }
        let report = audit(&state.ledger, &self.system, &self.comm);
        Ok(RunOutput {
            scheme,
            repeat,
            record: state.record,
            audit: report,
            ledger: state.ledger,
            final_model: state.model,
        })
    }

    /// Every repeat of every scheme, ordered by scheme then repeat.
    pub fn run_all(&self, schemes: &[Scheme]) -> Result<Vec<RunOutput>> {
        let repeats = self.config.repeats;
        self.exec
            .try_map(schemes.len() * repeats, |i| self.run(schemes[i / repeats], i % repeats))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub runs: Vec<RunOutput>,
    pub calibration: Option<Calibration>,
}

impl ExperimentOutput {
    pub fn records_for(&self, scheme: Scheme) -> Vec<MetricsRecord> {
        self.runs
            .iter()
            .filter(|r| r.scheme == scheme)
            .map(|r| r.record.clone())
            .collect()
    }

    pub fn constants(&self) -> Option<&TheoryConstants> {
        self.calibration.as_ref().map(|c| &c.constants)
    }
}

/// Run every configured scheme and repeat. With diagnostics enabled the
/// theory constants are first estimated on a calibration run.
pub fn run_experiment(config: &ExperimentConfig, exec: Exec) -> Result<ExperimentOutput> {
    let schemes = config.scheme_list();
    if schemes.is_empty() {
        return Err(Error::config("schemes", "no schemes selected"));
    }
    let mut sim = Simulation::new(config.clone(), exec)?;
    let calibration = if config.diagnostics.enabled {
        let cal = calibrate(config, exec)?;
        sim = sim.with_constants(cal.constants);
        Some(cal)
    } else {
        None
    };
    Ok(ExperimentOutput {
        runs: sim.run_all(&schemes)?,
        calibration,
    })
}
