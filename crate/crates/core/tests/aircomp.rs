use proptest::prelude::*;
use airfeel::aircomp::*;
use airfeel::rng::{purpose, StreamId};

#[test]
fn truncation_is_respected() {
    let ch = draw_channel(1000, 1.0, &mut StreamId::new(1, purpose::CHANNEL).rng()).unwrap();
    assert!(ch.h_mag.iter().all(|&h| h >= 1.0));
    let again = draw_channel(1000, 1.0, &mut StreamId::new(1, purpose::CHANNEL).rng()).unwrap();
    assert_eq!(ch, again);
    assert!(draw_channel(0, 1.0, &mut StreamId::new(1, purpose::CHANNEL).rng()).is_err());
}

#[test]
fn inversion_examples() {
    assert_eq!(inversion_power(4.0, 2.0).unwrap(), 1.0);
    assert_eq!(inversion_power(9.0, 3.0).unwrap(), 1.0);
    assert!(inversion_power(0.0, 1.0).is_err());
}

#[test]
fn noiseless_aggregation_is_plain_average() {
    let g = vec![vec![1.0, 2.0], vec![3.0, -4.0]];
    let out = aggregate(&g, 1.0, 0.0, &mut StreamId::new(1, purpose::NOISE).rng()).unwrap();
    assert_eq!(out, vec![2.0, -1.0]);
    assert!(aggregate(&[vec![1.0], vec![1.0, 2.0]], 1.0, 0.0, &mut StreamId::new(1, purpose::NOISE).rng()).is_err());
    assert!(aggregate::<Vec<f64>, _>(&[], 1.0, 0.0, &mut StreamId::new(1, purpose::NOISE).rng()).is_err());
}

#[test]
fn schedule_examples() {
    let s = PowerSchedule::new(PowerScheme::Proposed, 4.0, 10).unwrap();
    assert_eq!(schedule_c(&s, 4, 1.0).unwrap(), 1.0);
    let v = PowerSchedule::new(PowerScheme::Vanilla, 4.0, 10).unwrap();
    assert_eq!(schedule_c(&v, 1, 1.0).unwrap(), schedule_c(&v, 10, 1.0).unwrap());
    let rv = PowerSchedule::new(PowerScheme::Reversed, 4.0, 10).unwrap();
    assert_eq!(schedule_c(&rv, 10, 1.0).unwrap(), schedule_c(&rv, 9, 1.0).unwrap());
    assert!(schedule_c(&s, 0, 1.0).is_err());
    assert!(schedule_c(&s, 11, 1.0).is_err());
}

#[test]
fn schedule_monotonicity() {
    let r = 50;
    let c = |scheme| {
        let s = PowerSchedule::new(scheme, 2.0, r).unwrap();
        (1..=r).map(|i| schedule_c(&s, i, 0.5).unwrap()).collect::<Vec<_>>()
    };
    assert!(c(PowerScheme::Proposed).windows(2).all(|w| w[1] > w[0]));
    assert!(c(PowerScheme::Reversed)[..r - 1].windows(2).all(|w| w[1] < w[0]));
    assert!(c(PowerScheme::Vanilla).windows(2).all(|w| w[1] == w[0]));
}

#[test]
fn optimal_c_examples() {
    assert_eq!(optimal_c(1.0, 1.0, 1.0, 1.0, 1.0, 0.5).unwrap(), 1.0);
    let a = optimal_c(3.0, 2.0, 0.1, 0.01, 0.7, 0.2).unwrap();
    let b = optimal_c(3.0, 2.0, 0.1, 0.01, 0.7, 0.8).unwrap();
    assert!((a / b - 2.0).abs() < 1e-12);
    let floored = optimal_c(1.0, 1.0, 1.0, 1.0, 1.0, -3.0).unwrap();
    assert_eq!(floored, optimal_c(1.0, 1.0, 1.0, 1.0, 1.0, GAMMA_EPSILON).unwrap());
}

#[test]
fn optimal_ratio_property() {
    let c0 = optimal_c(100.0, 3.0, 0.2, 0.01, 1.5, 2.0).unwrap();
    let cr = optimal_c(100.0, 3.0, 0.2, 0.01, 1.5, 0.125).unwrap();
    assert!((cr / c0 - (2.0f64 / 0.125).sqrt()).abs() < 1e-12);
}

#[test]
fn unit_energy_examples() {
    assert_eq!(unit_energy(2.0, 3, 0.5, 1.0), 3.0);
    assert_eq!(unit_energy(2.0, 3, 0.5, 2.0), 1.5);
}

#[test]
fn comm_params_slots() {
    let c = CommParams::new(1.0, 1.0, 1e-3, 100, 709).unwrap();
    assert_eq!(c.t_slots, 8);
    assert!((c.upload_seconds() - 8e-3).abs() < 1e-15);
}

#[test]
fn tau_mappings() {
    assert_eq!(tau_from_c(2.0, 1.0, 0.1, TauMapping::Direct), 0.5);
    assert!((tau_from_c(2.0, 1.0, 0.1, TauMapping::EtaSquared) - 0.005).abs() < 1e-15);
}

#[test]
fn noise_variance_matches_calibration() {
    let d = 200_000;
    let zero = vec![0.0; d];
    let mut rng = StreamId::new(9, purpose::NOISE).rng();
    let out = aggregate(&[&zero[..]], 1e-3, 1e-3, &mut rng).unwrap();
    let mean = out.iter().sum::<f64>() / d as f64;
    let var = out.iter().map(|x| x * x).sum::<f64>() / d as f64;
    assert!(mean.abs() < 0.01);
    assert!((var - 1.0).abs() < 0.02, "{var}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn noiseless_aggregate_is_exact_average(
        grads in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 7), 1..8),
    ) {
        let mut oracle = vec![0.0; 7];
        for g in &grads {
            for (o, v) in oracle.iter_mut().zip(g) {
                *o += v;
            }
        }
        oracle.iter_mut().for_each(|o| *o /= grads.len() as f64);
        let mut rng = StreamId::new(0, purpose::NOISE).rng();
        prop_assert_eq!(aggregate(&grads, 0.0, 0.0, &mut rng).unwrap(), oracle);
    }

    #[test]
    fn inversion_power_cancels_the_channel(c in 1e-6f64..10.0, h in 1e-3f64..3.0) {
        let rho = inversion_power(c, h).unwrap();
        prop_assert!(((rho * h).powi(2) / c - 1.0).abs() < 1e-12);
        let power = rho * rho;
        prop_assert!(peak_power_ok(c, h, power * (1.0 + 1e-9)));
        prop_assert!(!peak_power_ok(c, h, power * (1.0 - 1e-9)));
    }

    #[test]
    fn proposed_and_reversed_mirror_each_other(q in 0.1f64..100.0, rounds in 2usize..200, p_n in 1e-8f64..1.0) {
        let pro = PowerSchedule::new(PowerScheme::Proposed, q, rounds).unwrap();
        let rev = PowerSchedule::new(PowerScheme::Reversed, q, rounds).unwrap();
        for r in 1..rounds {
            let a = schedule_c(&pro, r, p_n).unwrap();
            let b = schedule_c(&rev, rounds - r, p_n).unwrap();
            prop_assert!((a / b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_c_scales_with_inverse_root_gap(g0 in 1e-3f64..10.0, g1 in 1e-3f64..10.0) {
        let c0 = optimal_c(1e4, 2.0, 1e-6, 0.01, 0.5, g0).unwrap();
        let c1 = optimal_c(1e4, 2.0, 1e-6, 0.01, 0.5, g1).unwrap();
        prop_assert!((c1 / c0 - (g0 / g1).sqrt()).abs() < 1e-12 * (g0 / g1).sqrt());
    }
}
