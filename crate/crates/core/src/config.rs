//! Experiment configuration (TOML, schema version 1).
//!
//! Field names carry their units where they have one. Every field has a
//! default, so a config file only needs the values it changes; the full
//! default document is available from [`ExperimentConfig::default_toml`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aircomp::{CommParams, PowerScheme, TauMapping};
use crate::budget::SystemParams;
use crate::error::{Error, Result};
use crate::nn::{Activation, ArchSpec, LossKind};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensingMode {
    Reweight,
    Baseline,
}

impl SensingMode {
    pub fn name(self) -> &'static str {
        match self {
            SensingMode::Reweight => "reweight",
            SensingMode::Baseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "reweight" => Some(SensingMode::Reweight),
            "baseline" => Some(SensingMode::Baseline),
            _ => None,
        }
    }
}

/// One power schedule paired with one sensing mode, e.g. `proposed-reweight`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scheme {
    pub power: PowerScheme,
    pub sensing: SensingMode,
}

impl Scheme {
    pub fn new(power: PowerScheme, sensing: SensingMode) -> Self {
        Self { power, sensing }
    }

    pub fn name(&self) -> String {
        format!("{}-{}", self.power.name(), self.sensing.name())
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (p, m) = s.split_once('-')?;
        Some(Self::new(PowerScheme::parse(p)?, SensingMode::parse(m)?))
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub rounds: usize,
    pub devices: usize,
    pub repeats: usize,
    pub learning_rate: f64,
    pub eval_period_rounds: usize,
    pub holdout_size: usize,
    /// Explicit scheme list such as `["proposed-baseline", "vanilla-baseline"]`.
    /// When empty, every power scheme is paired with every sensing mode.
    pub schemes: Vec<String>,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub sensing: SensingConfig,
    pub power: PowerConfig,
    pub comm: CommConfig,
    pub system: SystemConfig,
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic(SyntheticConfig),
    Idx(IdxConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub class_count: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub label_noise_prob: f64,
    pub min_mean_separation: f64,
    /// When set, each device samples with replacement from a fixed pool of
    /// this many examples instead of drawing fresh ones every round.
    pub pool_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingConfig {
    pub modes: Vec<SensingMode>,
    pub alpha: f64,
    pub b_min: usize,
    pub b_max: usize,
    pub theta_bar_init: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub schemes: Vec<PowerScheme>,
    pub q: f64,
    pub tau_mapping: TauMapping,
    pub optimal: OptimalConfig,
}

/// Inputs of the closed-form schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimalConfig {
    /// Total per-device sample budget; defaults to `rounds · b_max`.
    pub sample_budget: Option<f64>,
    pub lipschitz: f64,
    pub sigma: f64,
    /// Loss infimum used for the optimality-gap proxy.
    pub f_star: f64,
    pub gamma_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommConfig {
    pub noise_power_w: f64,
    pub peak_power_w: f64,
    #[serde(rename = "T1_seconds")]
    pub t1_seconds: f64,
    pub scalars_per_slot: usize,
    pub h_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "T0_seconds")]
    pub t0_seconds: f64,
    pub cycles_per_sample: f64,
    pub cpu_hz: f64,
    pub switched_capacitance: f64,
    pub sensing_power_w: f64,
    pub sensing_power_min_w: f64,
    pub sensing_power_max_w: f64,
    pub latency_budget_seconds: f64,
    pub energy_budget_joules: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    pub calibration_rounds: usize,
    pub replay_draws: usize,
    pub calibration_scheme: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: SCHEMA_VERSION,
            seed: 42,
            rounds: 2000,
            devices: 5,
            repeats: 5,
            learning_rate: 0.01,
            eval_period_rounds: 10,
            holdout_size: 2000,
            schemes: Vec::new(),
            model: ModelConfig::default(),
            data: DataConfig::Synthetic(SyntheticConfig::default()),
            sensing: SensingConfig::default(),
            power: PowerConfig::default(),
            comm: CommConfig::default(),
            system: SystemConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layer_widths: vec![16, 32, 5],
            activation: Activation::Relu,
            loss: LossKind::CrossEntropy,
        }
    }
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            class_count: 5,
            feature_dim: 16,
            noise_std: 0.6,
            label_noise_prob: 0.0,
            min_mean_separation: 1.0,
            pool_size: None,
        }
    }
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            modes: vec![SensingMode::Reweight, SensingMode::Baseline],
            alpha: 0.1,
            b_min: 4,
            b_max: 32,
            theta_bar_init: 0.0,
        }
    }
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            schemes: vec![PowerScheme::Proposed, PowerScheme::Vanilla, PowerScheme::Reversed],
            q: 1.0,
            tau_mapping: TauMapping::Direct,
            optimal: OptimalConfig::default(),
        }
    }
}

impl Default for OptimalConfig {
    fn default() -> Self {
        Self {
            sample_budget: None,
            lipschitz: 1.0,
            sigma: 1.0,
            f_star: 0.0,
            gamma_floor: 1e-6,
        }
    }
}

impl Default for CommConfig {
    fn default() -> Self {
        Self {
            noise_power_w: 1e-6,
            peak_power_w: 1.0,
            t1_seconds: 1e-3,
            scalars_per_slot: 100,
            h_floor: 0.05,
        }
    }
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            t0_seconds: 1e-3,
            cycles_per_sample: 1e6,
            cpu_hz: 1e9,
            switched_capacitance: 1e-28,
            sensing_power_w: 0.1,
            sensing_power_min_w: 0.1,
            sensing_power_max_w: 1.0,
            latency_budget_seconds: 1000.0,
            energy_budget_joules: 100.0,
        }
    }
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            calibration_rounds: 200,
            replay_draws: 50,
            calibration_scheme: "vanilla-baseline".to_string(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| {
                    let line = text[..s.start].lines().count().max(1);
                    format!("line {line}")
                })
                .unwrap_or_else(|| "<document>".to_string());
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn default_toml() -> String {
        Self::default().to_toml()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::config(field, reason));
        if self.version != SCHEMA_VERSION {
            return bad("version", &format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.version));
        }
        if self.rounds == 0 {
            return bad("rounds", "must be at least 1");
        }
        if self.devices == 0 {
            return bad("devices", "must be at least 1");
        }
        if self.repeats == 0 {
            return bad("repeats", "must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate", "must be positive");
        }
        if self.eval_period_rounds == 0 {
            return bad("eval_period_rounds", "must be at least 1");
        }
        if self.holdout_size == 0 {
            return bad("holdout_size", "must be at least 1");
        }
        let arch = self.arch().map_err(|e| Error::config("model.layer_widths", e.to_string()))?;
        match &self.data {
            DataConfig::Synthetic(s) => {
                if s.class_count < 2 {
                    return bad("data.class_count", "must be at least 2");
                }
                if s.feature_dim == 0 {
                    return bad("data.feature_dim", "must be positive");
                }
                if !(s.noise_std > 0.0) {
                    return bad("data.noise_std", "must be positive");
                }
                if !(0.0..1.0).contains(&s.label_noise_prob) {
                    return bad("data.label_noise_prob", "must lie in [0, 1)");
                }
                if !(s.min_mean_separation >= 0.0) || s.min_mean_separation > 2.0 {
                    return bad("data.min_mean_separation", "unit-norm means cannot be more than 2 apart");
                }
                if s.pool_size == Some(0) {
                    return bad("data.pool_size", "must be positive when set");
                }
                if arch.input_dim() != s.feature_dim {
                    return bad("model.layer_widths", "input width must equal data.feature_dim");
                }
                if arch.loss == LossKind::CrossEntropy && arch.output_dim() != s.class_count {
                    return bad("model.layer_widths", "output width must equal data.class_count");
                }
            }
            DataConfig::Idx(_) => {}
        }
        let s = &self.sensing;
        if s.modes.is_empty() && self.schemes.is_empty() {
            return bad("sensing.modes", "at least one sensing mode");
        }
        if s.b_min == 0 || s.b_min > s.b_max {
            return bad("sensing.b_min", "need 1 <= b_min <= b_max");
        }
        if !(0.0..=1.0).contains(&s.alpha) {
            return bad("sensing.alpha", "must lie in [0, 1]");
        }
        if !(s.theta_bar_init >= 0.0) {
            return bad("sensing.theta_bar_init", "must be nonnegative");
        }
        let p = &self.power;
        if p.schemes.is_empty() && self.schemes.is_empty() {
            return bad("power.schemes", "at least one power scheme");
        }
        if !(p.q > 0.0) || !p.q.is_finite() {
            return bad("power.q", "must be positive");
        }
        let o = &p.optimal;
        if !(o.lipschitz > 0.0) {
            return bad("power.optimal.lipschitz", "must be positive");
        }
        if !(o.sigma > 0.0) {
            return bad("power.optimal.sigma", "must be positive");
        }
        if !(o.gamma_floor > 0.0) {
            return bad("power.optimal.gamma_floor", "must be positive");
        }
        if o.sample_budget.is_some_and(|b| !(b > 0.0)) {
            return bad("power.optimal.sample_budget", "must be positive when set");
        }
        for name in &self.schemes {
            if Scheme::parse(name).is_none() {
                return bad("schemes", &format!("unknown scheme `{name}` (expected <power>-<sensing>)"));
            }
        }
        let c = &self.comm;
        if !(c.noise_power_w >= 0.0) || !c.noise_power_w.is_finite() {
            return bad("comm.noise_power_w", "must be nonnegative and finite");
        }
        if c.noise_power_w == 0.0 && self.scheme_list().iter().any(|s| s.power == PowerScheme::Optimal) {
            return bad("comm.noise_power_w", "the optimal schedule needs positive noise power");
        }
        for (field, v) in [
            ("comm.peak_power_w", c.peak_power_w),
            ("comm.T1_seconds", c.t1_seconds),
            ("comm.h_floor", c.h_floor),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(field, "must be positive and finite");
            }
        }
        if c.scalars_per_slot == 0 {
            return bad("comm.scalars_per_slot", "must be positive");
        }
        let y = &self.system;
        for (field, v) in [
            ("system.T0_seconds", y.t0_seconds),
            ("system.cycles_per_sample", y.cycles_per_sample),
            ("system.cpu_hz", y.cpu_hz),
            ("system.switched_capacitance", y.switched_capacitance),
            ("system.sensing_power_w", y.sensing_power_w),
            ("system.sensing_power_min_w", y.sensing_power_min_w),
            ("system.sensing_power_max_w", y.sensing_power_max_w),
            ("system.latency_budget_seconds", y.latency_budget_seconds),
            ("system.energy_budget_joules", y.energy_budget_joules),
        ] {
            if !(v > 0.0) {
                return bad(field, "must be positive");
            }
        }
        if y.sensing_power_min_w > y.sensing_power_max_w {
            return bad("system.sensing_power_min_w", "must not exceed sensing_power_max_w");
        }
        let d = &self.diagnostics;
        if d.enabled {
            if d.calibration_rounds < 2 {
                return bad("diagnostics.calibration_rounds", "need at least 2 rounds");
            }
            if d.replay_draws == 0 {
                return bad("diagnostics.replay_draws", "must be positive");
            }
            if Scheme::parse(&d.calibration_scheme).is_none() {
                return bad("diagnostics.calibration_scheme", "unknown scheme");
            }
        }
        Ok(())
    }

    pub fn arch(&self) -> Result<ArchSpec> {
        ArchSpec::new(self.model.layer_widths.clone(), self.model.activation, self.model.loss)
    }

    pub fn comm_params(&self) -> Result<CommParams> {
        let c = &self.comm;
        CommParams::new(
            c.noise_power_w,
            c.peak_power_w,
            c.t1_seconds,
            c.scalars_per_slot,
            self.arch()?.param_count(),
        )
    }

    pub fn system_params(&self) -> SystemParams {
        let s = &self.system;
        SystemParams {
            t0: s.t0_seconds,
            nu: s.cycles_per_sample,
            phi: s.cpu_hz,
            kappa: s.switched_capacitance,
            p_s: s.sensing_power_w,
            p_s_min: s.sensing_power_min_w,
            p_s_max: s.sensing_power_max_w,
            t_max: s.latency_budget_seconds,
            e_max: s.energy_budget_joules,
        }
    }

    /// Schemes to run, in a stable order.
    pub fn scheme_list(&self) -> Vec<Scheme> {
        if !self.schemes.is_empty() {
            return self.schemes.iter().filter_map(|s| Scheme::parse(s)).collect();
        }
        let mut out = Vec::new();
        for &power in &self.power.schemes {
            for &sensing in &self.sensing.modes {
                out.push(Scheme::new(power, sensing));
            }
        }
        out
    }

    pub fn sample_budget(&self) -> f64 {
        self.power
            .optimal
            .sample_budget
            .unwrap_or((self.rounds * self.sensing.b_max) as f64)
    }
}
