use airfeel::selftest::*;

#[test]
fn clean_run_passes() {
    let r = run(Fault::None, 42).unwrap();
    assert!(r.passed(), "{r}");
}

#[test]
fn misscaled_noise_is_caught() {
    let r = run(Fault::NoiseScale(0.5), 42).unwrap();
    assert!(!r.passed());
    let failing: Vec<_> = r.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    assert_eq!(failing, vec!["aircomp-noise"]);
}
