use proptest::prelude::*;
use airfeel::sensing::*;
use airfeel::rng::{purpose, StreamId};
use airfeel::{Error, Result};

/// Replays scalar gradients `[norm]` from a fixed script.
struct Scripted {
    norms: Vec<f64>,
    next: usize,
}

impl Acquire for Scripted {
    fn dim(&self) -> usize {
        1
    }
    fn acquire(&mut self) -> Result<Vec<f64>> {
        let v = *self.norms.get(self.next).ok_or(Error::Exhausted { drawn: self.next })?;
        self.next += 1;
        Ok(vec![v])
    }
}

/// Straight-line transcript of the stopping rule, two-pass variance.
fn reference_stop(norms: &[f64], b_min: usize, b_max: usize, theta_bar: f64) -> (usize, f64) {
    let var = |xs: &[f64]| {
        if xs.len() < 2 {
            return 0.0;
        }
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let mut b = b_min;
    let mut theta = var(&norms[..b]);
    loop {
        let keep_going = b < b_max && (b as f64) * theta / (b_max as f64) < theta_bar;
        if !keep_going {
            return (b, theta);
        }
        b += 1;
        theta = var(&norms[..b]);
    }
}

fn rng() -> airfeel::rng::StreamRng {
    StreamId::new(17, purpose::RESAMPLE).rng()
}

#[test]
fn variance_examples() {
    assert_eq!(sample_variance(&[1.0, 2.0, 3.0]).unwrap(), 1.0);
    assert_eq!(sample_variance(&[4.0; 7]).unwrap(), 0.0);
    assert!(sample_variance(&[1.0]).is_err());
}

#[test]
fn weight_examples() {
    assert_eq!(importance_weights(&[1.0; 4]).unwrap(), vec![0.25; 4]);
    assert_eq!(importance_weights(&[3.0, 1.0]).unwrap(), vec![0.75, 0.25]);
    assert_eq!(importance_weights(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    assert!(importance_weights(&[]).is_err());
}

#[test]
fn equal_norms_give_unit_weights() {
    let b = GradientBatch::from_rows(2, &[[3.0, 4.0], [0.0, 5.0], [-5.0, 0.0]]).unwrap();
    let r = resample_to(&b, 3, &mut rng()).unwrap();
    assert!(r.weights().iter().all(|&w| w == 1.0));
    assert_eq!(r.raw_count(), 3);
    assert!(r.is_upsampled());
    assert!(resample_to(&r, 3, &mut rng()).is_err());
}

#[test]
fn zero_norm_rows_are_never_drawn() {
    let b = GradientBatch::from_rows(1, &[[0.0], [2.0]]).unwrap();
    let r = resample_to(&b, 50, &mut rng()).unwrap();
    assert!(r.norms().iter().all(|&n| n == 2.0));
    assert!(r.weights().iter().all(|&w| w == 0.5));
}

#[test]
fn all_zero_batch_resamples_uniformly() {
    let b = GradientBatch::from_rows(2, &[[0.0, 0.0], [0.0, 0.0]]).unwrap();
    let r = resample_to(&b, 4, &mut rng()).unwrap();
    assert!(r.weights().iter().all(|&w| w == 1.0));
    assert_eq!(r.weighted_mean(), vec![0.0, 0.0]);
}

#[test]
fn expected_reduction_examples() {
    let n = [1.0, 2.0, 3.0];
    assert_eq!(expected_variance_reduction(&n, 3).unwrap(), sample_variance(&n).unwrap());
    assert_eq!(expected_variance_reduction(&n, 6).unwrap(), 0.5);
    assert!(expected_variance_reduction(&[1.0], 4).is_err());
}

#[test]
fn moment_examples() {
    let est = MomentEstimate::new(1.0, 3.0).unwrap();
    let (m, v) = moment_prediction(est, 5, 8).unwrap();
    assert!((m - 0.5).abs() < 1e-15);
    assert!((v - 0.3125).abs() < 1e-15);
    let (_, v3) = moment_prediction(est, 3, 8).unwrap();
    assert_eq!(v3, 3.0 / 8.0);
    assert!(moment_prediction(est, 1, 8).is_err());
    assert!(MomentEstimate::new(2.0, 3.0).is_err());
}

#[test]
fn zero_threshold_takes_lucky_path() {
    let state = SensingControllerState::new(0.0, 0.1, 4, 32).unwrap();
    let mut acq = Scripted {
        norms: (1..=40).map(f64::from).collect(),
        next: 0,
    };
    let out = adaptive_collect(&mut acq, state, &mut rng()).unwrap();
    assert_eq!(out.batch.raw_count(), 4);
    assert_eq!(out.batch.len(), 32);
    let theta = sample_variance(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!((out.state.theta_bar - 0.1 * theta).abs() < 1e-15);
}

#[test]
fn unreachable_threshold_exhausts_budget() {
    let state = SensingControllerState::new(1e300, 0.1, 4, 32).unwrap();
    let mut acq = Scripted {
        norms: (0..40).map(|i| 1.0 + (i % 3) as f64).collect(),
        next: 0,
    };
    let out = adaptive_collect(&mut acq, state, &mut rng()).unwrap();
    assert_eq!(out.batch.raw_count(), 32);
    assert_eq!(acq.next, 32);
}

#[test]
fn stopping_index_matches_reference_transcript() {
    let script: Vec<f64> = vec![
        1.0, 1.1, 0.9, 1.05, 1.0, 0.95, 3.0, 1.0, 1.0, 6.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0,
    ];
    for theta_bar in [0.0, 0.01, 0.05, 0.2, 0.5, 1.0, 3.0, 100.0] {
        let state = SensingControllerState::new(theta_bar, 0.3, 3, 16).unwrap();
        let mut acq = Scripted {
            norms: script.clone(),
            next: 0,
        };
        let out = adaptive_collect(&mut acq, state, &mut rng()).unwrap();
        let (b, theta) = reference_stop(&script, 3, 16, theta_bar);
        assert_eq!(out.batch.raw_count(), b, "theta_bar={theta_bar}");
        assert!((out.theta - theta).abs() < 1e-12);
        assert!((out.state.theta_bar - (0.3 * theta + 0.7 * theta_bar)).abs() < 1e-12);
    }
}

#[test]
fn single_minimum_sample_starts_with_zero_variance() {
    let state = SensingControllerState::new(0.5, 0.1, 1, 8).unwrap();
    let mut acq = Scripted {
        norms: vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        next: 0,
    };
    let out = adaptive_collect(&mut acq, state, &mut rng()).unwrap();
    assert_eq!(out.batch.raw_count(), 8);
    assert_eq!(out.theta, 0.0);
}

#[test]
fn controller_validation() {
    assert!(SensingControllerState::new(0.0, 0.1, 0, 4).is_err());
    assert!(SensingControllerState::new(0.0, 0.1, 5, 4).is_err());
    assert!(SensingControllerState::new(0.0, 1.5, 1, 4).is_err());
    assert!(SensingControllerState::new(-1.0, 0.1, 1, 4).is_err());
}

#[test]
fn uniform_q_has_zero_realized_reduction() {
    let b = GradientBatch::from_rows(2, &[[1.0, 0.0], [0.0, 3.0], [2.0, 2.0]]).unwrap();
    let r = realized_variance_reduction(&b, &[1.0 / 3.0; 3], 6).unwrap();
    assert!(r.abs() < 1e-12);
}

#[test]
fn fixed_collect_takes_exactly_b() {
    let mut acq = Scripted {
        norms: vec![1.0, 2.0, 3.0],
        next: 0,
    };
    let b = fixed_collect(&mut acq, 3).unwrap();
    assert_eq!(b.raw_count(), 3);
    assert!(fixed_collect(&mut acq, 1).is_err());
}

/// Expected weighted mean over every ordered draw sequence of length `b_bar`.
fn exhaustive_expectation(rows: &[Vec<f64>], b_bar: usize) -> Vec<f64> {
    let b = rows.len();
    let norms: Vec<f64> = rows.iter().map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let total: f64 = norms.iter().sum();
    let q: Vec<f64> = norms.iter().map(|n| n / total).collect();
    let d = rows[0].len();
    let mut out = vec![0.0; d];
    for code in 0..b.pow(b_bar as u32) {
        let mut c = code;
        let mut p = 1.0;
        let mut est = vec![0.0; d];
        for _ in 0..b_bar {
            let i = c % b;
            c /= b;
            p *= q[i];
            let w = 1.0 / (b as f64 * q[i]);
            for (e, g) in est.iter_mut().zip(&rows[i]) {
                *e += w * g / b_bar as f64;
            }
        }
        for (o, e) in out.iter_mut().zip(&est) {
            *o += p * e;
        }
    }
    out
}

#[test]
fn resampled_estimator_is_unbiased_exhaustively() {
    let rows = [vec![3.0, -1.0], vec![0.5, 2.0], vec![-0.25, 0.75]];
    for b in 1..=3 {
        for b_bar in 1..=4 {
            let sub = &rows[..b];
            let expect = exhaustive_expectation(sub, b_bar);
            let mean: Vec<f64> = (0..2).map(|c| sub.iter().map(|r| r[c]).sum::<f64>() / b as f64).collect();
            for (e, m) in expect.iter().zip(&mean) {
                assert!((e - m).abs() <= 1e-12, "b={b} b_bar={b_bar}: {e} vs {m}");
            }
        }
    }
}

#[test]
fn attached_weights_are_inverse_probabilities() {
    let rows = vec![vec![3.0, 4.0], vec![1.0, 0.0], vec![0.0, 2.0]];
    let batch = GradientBatch::from_rows(2, &rows).unwrap();
    let out = resample_to(&batch, 50, &mut rng()).unwrap();
    // norms 5, 1, 2 so q = 5/8, 1/8, 2/8 and (1/b)/q = 8/15, 8/3, 4/3
    for (row, &w) in out.rows().zip(out.weights()) {
        let expected = match row {
            [3.0, 4.0] => 8.0 / 15.0,
            [1.0, 0.0] => 8.0 / 3.0,
            [0.0, 2.0] => 4.0 / 3.0,
            other => panic!("unexpected row {other:?}"),
        };
        assert!((w - expected).abs() < 1e-15);
    }
    assert_eq!(out.raw_count(), 3);
    assert!(out.is_upsampled());
    assert!(resample_to(&out, 4, &mut rng()).is_err());
}

#[test]
fn sample_variance_of_normal_draws() {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng();
    let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut r)).collect();
    assert!((sample_variance(&xs).unwrap() - 1.0).abs() < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn importance_weights_form_a_distribution(norms in prop::collection::vec(0.0f64..100.0, 1..40)) {
        let q = importance_weights(&norms).unwrap();
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(q.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn controller_respects_bounds_and_averages_threshold(
        norms in prop::collection::vec(0.01f64..10.0, 64),
        theta_bar in 0.0f64..20.0,
        alpha in 0.0f64..=1.0,
        b_min in 1usize..8,
        extra in 0usize..40,
    ) {
        let b_max = b_min + extra;
        let state = SensingControllerState::new(theta_bar, alpha, b_min, b_max).unwrap();
        let mut acq = Scripted { norms: norms.clone(), next: 0 };
        let out = adaptive_collect(&mut acq, state, &mut rng()).unwrap();
        let raw = out.batch.raw_count();
        prop_assert!(b_min <= raw && raw <= b_max);
        prop_assert_eq!(out.batch.len(), b_max);
        let (stop, theta) = reference_stop(&norms, b_min, b_max, theta_bar);
        prop_assert_eq!(raw, stop);
        prop_assert!((out.theta - theta).abs() <= 1e-9 * theta.max(1.0));
        let (lo, hi) = (out.theta.min(theta_bar), out.theta.max(theta_bar));
        prop_assert!(out.state.theta_bar >= lo - 1e-12 && out.state.theta_bar <= hi + 1e-12);
    }

    #[test]
    fn realized_reduction_never_exceeds_bound(
        rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 2..20),
        b_bar in 1usize..64,
    ) {
        let batch = GradientBatch::from_rows(3, &rows).unwrap();
        prop_assume!(batch.norms().iter().all(|&n| n > 0.0));
        let q = importance_weights(batch.norms()).unwrap();
        let realized = realized_variance_reduction(&batch, &q, b_bar).unwrap();
        let bound = expected_variance_reduction(batch.norms(), b_bar).unwrap();
        prop_assert!(realized <= bound * (1.0 + 1e-9) + 1e-12);
    }
}
