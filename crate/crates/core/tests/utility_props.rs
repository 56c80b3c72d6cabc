use std::collections::BTreeSet;

use cofigel::utility::{
    bootstrap_floor, delivery_factor, effective_r_plus, mean_wait, rating_gain_bound, utility,
    ContactStats, ItemStats, QueuePositionMatrix,
};
use cofigel::{ItemId, NodeId, UserId};
use proptest::prelude::*;

fn stats(n: usize, r: usize, g: usize) -> ItemStats {
    ItemStats {
        item: ItemId(1),
        n,
        g_plus: g,
        r_plus: r,
        holders: [NodeId(0)].into(),
        targets: BTreeSet::new(),
    }
}

fn nrg() -> impl Strategy<Value = (usize, usize, usize)> {
    (10usize..=1000)
        .prop_flat_map(|n| (Just(n), 1..n))
        .prop_flat_map(|(n, r)| (Just(n), Just(r), 0..=n - r))
}

/// Product form, evaluated directly where it cannot overflow.
fn oracle_gain_bound(n: usize, r: usize, g: usize) -> f64 {
    let (n, r, g) = (n as f64, r as f64, g as f64);
    let e = (r * r / (n - r)).exp();
    let p = (1.0 - r / n).powf(r + g);
    (e * p).min(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn gain_bound_is_a_probability_and_shrinks_with_g((n, r, g) in nrg()) {
        let here = rating_gain_bound(&stats(n, r, g));
        prop_assert!((0.0..=1.0).contains(&here), "{here}");
        if g + r < n {
            prop_assert!(rating_gain_bound(&stats(n, r, g + 1)) <= here);
        }
        if r * r / (n - r) < 500 {
            let want = oracle_gain_bound(n, r, g);
            prop_assert!((here - want).abs() <= 1e-9 * want.max(1.0), "{here} vs {want}");
        }
    }

    #[test]
    fn delivery_factor_bounds_and_monotonicity(
        mu in 0.0f64..1e4,
        extra in 0.0f64..1e3,
        targets in 0usize..200,
        t in 0.0f64..1e5,
        dt in 0.0f64..1e4,
    ) {
        let d = delivery_factor(mu, targets, t);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(delivery_factor(mu + extra, targets, t) <= d);
        prop_assert!(delivery_factor(mu, targets + 1, t) <= d);
        prop_assert!(delivery_factor(mu, targets, t + dt) >= d);
    }

    #[test]
    fn mean_wait_grows_with_queue_offsets(
        offsets in prop::collection::vec(0u64..50_000_000, 1..8),
        bump in 1u64..10_000_000,
        which in any::<prop::sample::Index>(),
        lambda in 1e-4f64..1.0,
        bytes in 1e5f64..1e9,
    ) {
        let cs = ContactStats { lambda, bytes_per_contact: bytes };
        let holders: BTreeSet<NodeId> = (0..offsets.len() as u32).map(NodeId).collect();
        let mut sigma = QueuePositionMatrix::new();
        for (k, &b) in offsets.iter().enumerate() {
            sigma.record(ItemId(3), NodeId(k as u32), b, 0.0);
        }
        let base = mean_wait(&sigma, ItemId(3), &cs, &holders).unwrap();
        let total: u64 = offsets.iter().sum();
        let want = total as f64 / (lambda * bytes * offsets.len() as f64);
        prop_assert!((base - want).abs() <= 1e-9 * want.max(1.0));

        let k = which.index(offsets.len());
        sigma.record(ItemId(3), NodeId(k as u32), offsets[k] + bump, 1.0);
        prop_assert!(mean_wait(&sigma, ItemId(3), &cs, &holders).unwrap() >= base);
    }

    #[test]
    fn utility_is_nonnegative_and_bounded(
        (n, r, g) in nrg(),
        n_targets in 0u32..50,
        offset in 0u64..1_000_000_000,
        t in -100.0f64..1e5,
    ) {
        let mut s = stats(n, r, g);
        s.targets = (0..n_targets).map(UserId).collect();
        let mut sigma = QueuePositionMatrix::new();
        sigma.record(ItemId(1), NodeId(0), offset, 0.0);
        let cs = ContactStats { lambda: 0.01, bytes_per_contact: 5e7 };
        let v = utility(&s, &sigma, &cs, t).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!(v <= (g + r) as f64 + 1e-12);
        if t <= 0.0 {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn bootstrap_floor_is_at_least_one_percent(n in 1usize..100_000, observed in 0usize..200) {
        let floor = bootstrap_floor(n, 0.01);
        prop_assert!(floor >= 1);
        prop_assert!(floor as f64 >= 0.01 * n as f64);
        prop_assert!((floor as f64) < 0.01 * n as f64 + 1.0);
        let r = effective_r_plus(observed, n, 0.01);
        prop_assert_eq!(r, observed.max(floor).min(n));
    }
}

#[test]
fn gain_bound_edges() {
    assert_eq!(rating_gain_bound(&stats(50, 50, 0)), 0.0);
    // r = 1, g = 0: e^{1/(n-1)}(1-1/n) = 1 in the limit, capped at 1.
    assert!(rating_gain_bound(&stats(10, 1, 0)) <= 1.0);
    let v = rating_gain_bound(&stats(10, 1, 0));
    let want = ((1.0f64 / 9.0).exp() * 0.9).min(1.0);
    assert!((v - want).abs() < 1e-12);
}

#[test]
fn utility_spot_value() {
    // n=100, r=10, g=50, two holders at 15 MB and 5 MB, one target,
    // ρ = 0.01/s x 100 MB = 1 MB/s, μ = 10 s, t = 100 s: D = 0.9.
    let mut s = stats(100, 10, 50);
    s.holders = [NodeId(1), NodeId(2)].into();
    s.targets = [UserId(9)].into();
    let mut sigma = QueuePositionMatrix::new();
    sigma.record(ItemId(1), NodeId(1), 15_000_000, 0.0);
    sigma.record(ItemId(1), NodeId(2), 5_000_000, 0.0);
    let cs = ContactStats {
        lambda: 0.01,
        bytes_per_contact: 1e8,
    };
    let v = utility(&s, &sigma, &cs, 100.0).unwrap();
    let g = (100.0f64 / 90.0).exp() * 0.9f64.powi(60);
    assert!((v - 60.0 * g * 0.9).abs() < 1e-12, "{v}");
}
