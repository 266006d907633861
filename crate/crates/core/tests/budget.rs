use proptest::prelude::*;
use airfeel::budget::*;
use airfeel::aircomp::CommParams;

fn unit_params() -> (SystemParams, CommParams) {
    let params = SystemParams {
        t0: 1.0,
        nu: 1.0,
        phi: 1.0,
        kappa: 1.0,
        p_s: 2.0,
        p_s_min: 1.0,
        p_s_max: 3.0,
        t_max: f64::INFINITY,
        e_max: f64::INFINITY,
    };
    let comm = CommParams {
        p_n: 1.0,
        p_cm_max: 1.0,
        t1: 1.0,
        l_slot: 1,
        t_slots: 1,
    };
    (params, comm)
}

#[test]
fn latency_examples() {
    let (p, c) = unit_params();
    let l = round_latency(2, &p, &c);
    assert_eq!((l.sensing, l.compute, l.comm, l.total), (2.0, 2.0, 1.0, 5.0));
    let z = round_latency(0, &p, &c);
    assert_eq!((z.sensing, z.compute, z.total), (0.0, 0.0, 1.0));
    let t = |b| round_latency(b, &p, &c).total;
    assert_eq!(t(6) - t(3), t(9) - t(6));
}

#[test]
fn energy_examples() {
    let (p, c) = unit_params();
    let e = round_energy(3, 1.0, 1.0, &p, &c);
    assert_eq!(e.sensing, 6.0);
    let e2 = round_energy(3, 1.0, 2f64.sqrt(), &p, &c);
    assert!((e2.comm - e.comm / 2.0).abs() < 1e-15);
}

#[test]
fn exhausted_energy_gives_zero_q() {
    let (mut p, c) = unit_params();
    p.e_max = 10.0;
    let f = feasibility_q(&[2.5; 4], &p, &c, 1.0).unwrap();
    assert_eq!(f.energy_branch, 0.0);
    assert_eq!(f.q, 0.0);
    assert!(!f.is_feasible());
}

#[test]
fn infinite_latency_budget_defers_to_energy() {
    let (mut p, c) = unit_params();
    p.e_max = 100.0;
    let f = feasibility_q(&[1.0; 10], &p, &c, 1.0).unwrap();
    assert!(f.latency_branch.is_infinite());
    assert_eq!(f.q, f.energy_branch);
    assert_eq!(f.binding(), "energy");
}

#[test]
fn unlimited_budgets_pass() {
    let (p, c) = unit_params();
    let r = audit_plan(&[5; 10], &[0.5; 10], &vec![vec![1.0, 2.0]; 10], &p, &c).unwrap();
    assert!(r.passed(), "{r}");
}

#[test]
fn constructed_c3_violation_is_pinpointed() {
    let (p, c) = unit_params();
    let mut sched = vec![0.5; 10];
    sched[6] = 1.5;
    let r = audit_plan(&[1; 10], &sched, &vec![vec![1.0]; 10], &p, &c).unwrap();
    assert_eq!(r.first_failure(), Some(("C3", 7)));
    assert!(r.check("C1").unwrap().passed());
}

#[test]
fn c4_violation() {
    let (mut p, c) = unit_params();
    p.p_s = 5.0;
    let r = audit_plan(&[1; 3], &[0.5; 3], &vec![vec![1.0]; 3], &p, &c).unwrap();
    assert_eq!(r.first_failure(), Some(("C4", 1)));
}

#[test]
fn ledger_totals_are_prefix_sums() {
    let (p, c) = unit_params();
    let mut ledger = RoundLedger::new(2);
    let mut lat = 0.0;
    let mut dev = [0.0, 0.0];
    for r in 1..=20 {
        let e = RoundEntry::compute(r, 0.1 * r as f64, vec![r, 2 * r], vec![1.0, 1.5], &p, &c).unwrap();
        lat += e.latency.total;
        dev[0] += e.energy[0].total();
        dev[1] += e.energy[1].total();
        ledger.append(e).unwrap();
    }
    assert_eq!(ledger.cum_latency(), lat);
    assert_eq!(ledger.cum_device_energy(), &dev);
    assert_eq!(ledger.cum_raw_samples(), 3 * 210);
    assert!(ledger.append(RoundEntry::compute(21, 1.0, vec![1], vec![1.0], &p, &c).unwrap()).is_err());
}

#[test]
fn slowest_device_sets_round_latency() {
    let (p, c) = unit_params();
    let e = RoundEntry::compute(1, 1.0, vec![2, 7, 3], vec![1.0; 3], &p, &c).unwrap();
    assert_eq!(e.latency.total, 15.0);
}

fn system(t0: f64, nu: f64, phi: f64, kappa: f64, p_s: f64, t_max: f64, e_max: f64) -> SystemParams {
    SystemParams {
        t0,
        nu,
        phi,
        kappa,
        p_s,
        p_s_min: p_s,
        p_s_max: 2.0 * p_s,
        t_max,
        e_max,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn plans_within_q_pass_and_plans_beyond_fail(
        t0 in 1e-4f64..1e-2,
        nu in 1e5f64..1e7,
        p_s in 0.05f64..0.5,
        rounds in 1usize..60,
        per_round in 1.0f64..40.0,
        c in 1e-5f64..1e-3,
        h in 0.05f64..1.0,
        devices in 1usize..5,
        latency_bound in any::<bool>(),
    ) {
        let comm = CommParams::new(1e-6, 10.0, 1e-3, 100, 1000).unwrap();
        let mut params = system(t0, nu, 1e9, 1e-28, p_s, f64::INFINITY, f64::INFINITY);
        let schedule = vec![c; rounds];
        let r = rounds as f64;
        let comm_j = r * comm.upload_seconds() * c / (h * h);
        if latency_bound {
            params.t_max = r * comm.upload_seconds() + r * per_round * params.seconds_per_sample();
        } else {
            params.e_max = comm_j + r * per_round * (p_s * t0 + params.compute_joules_per_sample());
        }
        let f = feasibility_q(&schedule, &params, &comm, h).unwrap();
        prop_assert!((f.q / (r * per_round) - 1.0).abs() < 1e-9);
        prop_assert_eq!(f.binding(), if latency_bound { "latency" } else { "energy" });
        let channels = vec![vec![h; devices]; rounds];
        let inside = f.q.floor() as usize / rounds;
        if inside >= 1 {
            let report = audit_plan(&vec![inside; rounds], &schedule, &channels, &params, &comm).unwrap();
            prop_assert!(report.check("C1").unwrap().passed() && report.check("C2").unwrap().passed());
        }
        let beyond = (f.q.ceil() as usize / rounds) + 2;
        let report = audit_plan(&vec![beyond; rounds], &schedule, &channels, &params, &comm).unwrap();
        let (name, round) = report.first_failure().unwrap();
        prop_assert_eq!(name, if latency_bound { "C1" } else { "C2" });
        prop_assert!(round >= 1 && round <= rounds);
    }

    #[test]
    fn ledger_raw_samples_sum_over_devices_and_rounds(
        batches in prop::collection::vec(prop::collection::vec(1usize..40, 3), 1..20),
    ) {
        let (p, c) = unit_params();
        let mut ledger = RoundLedger::new(3);
        for (r, b) in batches.iter().enumerate() {
            ledger.append(RoundEntry::compute(r + 1, 1.0, b.clone(), vec![1.0; 3], &p, &c).unwrap()).unwrap();
        }
        let total: usize = batches.iter().flatten().sum();
        prop_assert_eq!(ledger.cum_raw_samples(), total);
        let slowest: f64 = batches.iter().map(|b| *b.iter().max().unwrap() as f64 * 2.0 + 1.0).sum();
        prop_assert_eq!(ledger.cum_latency(), slowest);
    }
}
