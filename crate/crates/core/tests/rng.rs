use proptest::prelude::*;
use airfeel::rng::*;
use rand::Rng;

#[test]
fn same_key_same_stream() {
    let id = StreamId::new(42, purpose::DATA).device(3).round(7);
    let a: Vec<u64> = id.rng().random_iter().take(8).collect();
    let b: Vec<u64> = id.rng().random_iter().take(8).collect();
    assert_eq!(a, b);
}

#[test]
fn any_component_changes_stream() {
    let base = StreamId::new(42, purpose::DATA).device(3).round(7);
    let first = |id: StreamId| id.rng().random::<u64>();
    let x = first(base);
    assert_ne!(x, first(StreamId { seed: 43, ..base }));
    assert_ne!(x, first(StreamId { purpose: purpose::HOLDOUT, ..base }));
    assert_ne!(x, first(base.repeat(1)));
    assert_ne!(x, first(base.device(4)));
    assert_ne!(x, first(base.round(8)));
    assert_ne!(x, first(base.draw(1)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn keys_differing_in_one_component_give_different_streams(
        seed in any::<u64>(), repeat in 0u64..100, device in 0u64..100, round in 0u64..10_000, which in 0usize..4,
    ) {
        let base = StreamId::new(seed, purpose::NOISE).repeat(repeat).device(device).round(round);
        let other = match which {
            0 => StreamId { seed: seed.wrapping_add(1), ..base },
            1 => base.repeat(repeat + 1),
            2 => base.device(device + 1),
            _ => base.round(round + 1),
        };
        let a: Vec<u64> = base.rng().random_iter().take(4).collect();
        let b: Vec<u64> = other.rng().random_iter().take(4).collect();
        prop_assert_ne!(a, b.clone());
        let again: Vec<u64> = other.rng().random_iter().take(4).collect();
        prop_assert_eq!(b, again);
    }
}
