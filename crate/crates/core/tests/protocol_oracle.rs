use proptest::prelude::*;
use ratesync::protocol::{
    check_two_node_cycle, expected_count_acyclic, expected_count_cyclic,
    oracle_expected_schedule, ChannelTiming, Rate, DEFAULT_EPSILON,
};

const K_MAX: u64 = 100;

fn timing(f_n: f64, f_i: f64, tau: f64, cyclic: bool) -> ChannelTiming {
    ChannelTiming::new(Rate::new(f_n).unwrap(), Rate::new(f_i).unwrap(), tau, cyclic).unwrap()
}

fn formula_schedule(t: &ChannelTiming, k_max: u64) -> Vec<u64> {
    (0..=k_max)
        .map(|k| {
            if t.is_cyclic() {
                expected_count_cyclic(k, t, DEFAULT_EPSILON).unwrap().get()
            } else {
                expected_count_acyclic(k, t).unwrap().get()
            }
        })
        .collect()
}

/// Rates on a 1 mHz grid in [0.5, 500] Hz; delays in [0, 3 producer periods].
fn channel(cyclic: bool) -> impl Strategy<Value = ChannelTiming> {
    (500u32..=500_000, 500u32..=500_000, 0.0f64..3.0).prop_map(move |(n, i, frac)| {
        let f_n = n as f64 / 1000.0;
        let f_i = i as f64 / 1000.0;
        timing(f_n, f_i, frac / f_i, cyclic)
    })
}

/// Rates drawn from small integer ratios so callbacks and arrivals coincide
/// often; delays on whole producer periods.
fn coincident_channel(cyclic: bool) -> impl Strategy<Value = ChannelTiming> {
    (1u32..=12, 1u32..=12, 1u32..=20, 0u32..=3).prop_map(move |(a, b, base, periods)| {
        let f_n = (a * base) as f64;
        let f_i = (b * base) as f64;
        timing(f_n, f_i, periods as f64 / f_i, cyclic)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn acyclic_matches_oracle(t in channel(false)) {
        prop_assert_eq!(formula_schedule(&t, K_MAX), oracle_expected_schedule(&t, K_MAX).unwrap());
    }

    #[test]
    fn cyclic_matches_oracle(t in channel(true)) {
        prop_assert_eq!(formula_schedule(&t, K_MAX), oracle_expected_schedule(&t, K_MAX).unwrap());
    }

    #[test]
    fn boundary_coincidences_match(t in coincident_channel(false), c in coincident_channel(true)) {
        prop_assert_eq!(formula_schedule(&t, K_MAX), oracle_expected_schedule(&t, K_MAX).unwrap());
        prop_assert_eq!(formula_schedule(&c, K_MAX), oracle_expected_schedule(&c, K_MAX).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn cumulative_tracks_arrivals(t in channel(false)) {
        let f_n = t.consumer_rate().hz();
        let f_i = t.producer_rate().hz();
        let mut total = 0u64;
        let mut previous = 0u64;
        for (k, delta) in formula_schedule(&t, K_MAX).into_iter().enumerate() {
            total += delta;
            prop_assert!(total >= previous);
            previous = total;
            let ideal = 1.0 + ((f_i * k as f64 / f_n) - f_i * t.delay()).floor().max(0.0);
            prop_assert!((total as f64 - ideal).abs() <= 1.0, "k={} total={} ideal={}", k, total, ideal);
        }
    }

    #[test]
    fn per_callback_burst_is_bounded(t in channel(false), c in channel(true)) {
        for timing in [t, c] {
            let bound = (timing.producer_rate().hz() / timing.consumer_rate().hz()).ceil() as u64 + 1;
            for (k, delta) in formula_schedule(&timing, K_MAX).into_iter().enumerate().skip(1) {
                prop_assert!(delta <= bound, "k={} delta={} bound={}", k, delta, bound);
            }
        }
    }

    #[test]
    fn counts_are_pure(t in channel(false), c in channel(true)) {
        prop_assert_eq!(formula_schedule(&t, 20), formula_schedule(&t, 20));
        prop_assert_eq!(formula_schedule(&c, 20), formula_schedule(&c, 20));
    }

    #[test]
    fn two_node_cycles_never_deadlock(
        a in 500u32..=200_000,
        b in 500u32..=200_000,
        d1 in 0.0f64..3.0,
        d2 in 0.0f64..3.0,
    ) {
        let fa = a as f64 / 1000.0;
        let fb = b as f64 / 1000.0;
        let report = check_two_node_cycle(
            Rate::new(fa).unwrap(),
            Rate::new(fb).unwrap(),
            d1 / fb,
            d2 / fa,
            K_MAX,
        ).unwrap();
        prop_assert!(!report.deadlocked, "{} <-> {}: {:?}", fa, fb, report);
    }
}

#[test]
fn worked_examples() {
    assert_eq!(expected_count_acyclic(0, &timing(20.0, 60.0, 0.0, false)).unwrap().get(), 1);
    assert_eq!(expected_count_acyclic(1, &timing(10.0, 10.0, 0.0, false)).unwrap().get(), 1);
    assert_eq!(expected_count_acyclic(1, &timing(20.0, 60.0, 0.0, false)).unwrap().get(), 3);
    assert_eq!(expected_count_acyclic(1, &timing(20.0, 60.0, 0.1, false)).unwrap().get(), 0);

    let c = timing(30.0, 30.0, 0.0, true);
    assert_eq!(expected_count_cyclic(0, &c, DEFAULT_EPSILON).unwrap().get(), 0);
    assert_eq!(expected_count_cyclic(1, &c, DEFAULT_EPSILON).unwrap().get(), 1);
    let c = timing(60.0, 30.0, 0.0, true);
    assert_eq!(expected_count_cyclic(1, &c, DEFAULT_EPSILON).unwrap().get(), 1);
    assert_eq!(expected_count_cyclic(2, &c, DEFAULT_EPSILON).unwrap().get(), 0);

    let t = timing(20.0, 60.0, 0.1, false);
    assert_eq!(oracle_expected_schedule(&t, 3).unwrap(), formula_schedule(&t, 3));
    assert_eq!(
        oracle_expected_schedule(&timing(20.0, 60.0, 0.0, false), 2).unwrap(),
        vec![1, 3, 3]
    );
}
