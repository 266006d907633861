#![allow(clippy::field_reassign_with_default)]

use airfeel::diagnostics::*;
use airfeel::{run_experiment, Exec, ExperimentConfig};

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.devices = 3;
    c.holdout_size = 300;
    c.model.layer_widths = vec![16, 8, 5];
    c.sensing.b_max = 16;
    c.diagnostics.enabled = true;
    c.diagnostics.calibration_rounds = 60;
    c.diagnostics.replay_draws = 10;
    c
}

#[test]
fn calibration_estimates_valid_constants_and_checks_every_eval_round() {
    let c = small();
    let cal = calibrate(&c, Exec::Parallel).unwrap();
    cal.constants.validate().unwrap();
    assert!(cal.constants.lipschitz > 0.0);
    assert!(cal.constants.sigma > 0.0);
    assert!(cal.constants.mu_g > 0.0 && cal.constants.mu_g <= 1.0);
    assert_eq!(cal.trace_rounds, (0..=60).step_by(10).collect::<Vec<_>>());
    assert_eq!(cal.trace.len(), cal.trace_rounds.len());
    assert_eq!(cal.replay.len(), 6);
    assert!(cal.replay.iter().all(|r| r.bound.is_finite() && r.realized.is_finite()));
    assert!(cal.descent_pass_rate() >= 0.0 && cal.descent_pass_rate() <= 1.0);
    assert!(cal.gen_bound.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(cal.gen_bound.len(), 60);
    assert_eq!(cal.gen.len(), 6);
}

#[test]
fn calibration_is_deterministic() {
    let c = small();
    let a = calibrate(&c, Exec::Parallel).unwrap();
    let b = calibrate(&c, Exec::Sequential).unwrap();
    assert_eq!(a.constants, b.constants);
    assert_eq!(a.replay, b.replay);
    assert_eq!(a.gen_bound, b.gen_bound);
}

#[test]
fn experiment_rows_carry_diagnostics_when_enabled() {
    let mut c = small();
    c.rounds = 40;
    c.repeats = 1;
    c.schemes = vec!["proposed-reweight".into()];
    let out = run_experiment(&c, Exec::Parallel).unwrap();
    assert!(out.calibration.is_some());
    let rec = &out.runs[0].record;
    assert!(rec.has_diagnostics());
    let gen: Vec<f64> = rec.rows.iter().map(|r| r.diagnostics.unwrap().gen_error_bound).collect();
    assert_eq!(gen[0], 0.0);
    assert!(gen.windows(2).all(|w| w[1] >= w[0]));

    c.diagnostics.enabled = false;
    let plain = run_experiment(&c, Exec::Parallel).unwrap();
    assert!(plain.calibration.is_none());
    assert!(!plain.runs[0].record.has_diagnostics());
}
