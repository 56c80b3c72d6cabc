use std::collections::{BTreeMap, BTreeSet};

use cofigel::sim::ContactEvent;
use cofigel::trace_io::{
    assign_roles, eligible_nodes, format_contact_trace, format_ratings, parse_contact_trace,
    parse_contact_trace_str, parse_ratings, parse_raw_ratings_str, reduce_dataset, synth_ratings,
    synth_trace, write_contact_trace, write_ratings, Eligibility, GroundTruthRatings, SynthRatings,
    TraceError,
};
use cofigel::{ItemId, NodeId, UserId};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Maximal runs of covered unit cells, per pair.
fn oracle_union(raw: &[(u32, u32, u8, u8)]) -> Vec<ContactEvent> {
    let mut cells: BTreeMap<(u8, u8), [bool; 64]> = BTreeMap::new();
    for &(s, len, a, b) in raw {
        let key = (a.min(b), a.max(b));
        let row = cells.entry(key).or_insert([false; 64]);
        for c in s..s + len {
            row[c as usize] = true;
        }
    }
    let mut out = Vec::new();
    for ((a, b), row) in cells {
        let mut c = 0;
        while c < 64 {
            if !row[c] {
                c += 1;
                continue;
            }
            let start = c;
            while c < 64 && row[c] {
                c += 1;
            }
            out.push(ContactEvent::new(
                start as f64,
                c as f64,
                NodeId(a as u32),
                NodeId(b as u32),
            ));
        }
    }
    out.sort_by(|x, y| {
        x.start
            .total_cmp(&y.start)
            .then(x.node_a.cmp(&y.node_a))
            .then(x.node_b.cmp(&y.node_b))
    });
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn overlapping_contacts_merge_like_interval_union(
        raw in prop::collection::vec(
            (0u32..40, 1u32..20, 0u8..4, 0u8..4).prop_filter("distinct", |c| c.2 != c.3),
            0..25,
        )
    ) {
        let text: String = raw
            .iter()
            .map(|&(s, len, a, b)| format!("{s} {} {a} {b}\n", s + len))
            .collect();
        prop_assert_eq!(parse_contact_trace_str(&text).unwrap(), oracle_union(&raw));
    }

    #[test]
    fn format_then_parse_is_identity(seed in any::<u64>(), nodes in 2u32..6) {
        let events = synth_trace(nodes, 5_000.0, 300.0, 40.0, &mut rng(seed));
        let back = parse_contact_trace_str(&format_contact_trace(&events)).unwrap();
        prop_assert_eq!(back, events);
    }

    #[test]
    fn ratings_round_trip_and_binarize(seed in any::<u64>(), threshold in 1u8..=5) {
        let shape = SynthRatings { users: 12, items: 15, density: 0.4, ..SynthRatings::default() };
        let rows = synth_ratings(&shape, &mut rng(seed));
        let back = parse_raw_ratings_str(&format_ratings(&rows)).unwrap();
        prop_assert_eq!(&back, &rows);
        let gt = GroundTruthRatings::from_raw(&rows, threshold).unwrap();
        prop_assert_eq!(gt.len(), rows.len());
        for r in &rows {
            prop_assert_eq!(gt.get(r.user, r.item), Some(r.stars >= threshold));
        }
    }
}

#[test]
fn file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let events = synth_trace(4, 10_000.0, 500.0, 30.0, &mut rng(3));
    let path = dir.path().join("trace.txt");
    write_contact_trace(&events, &path).unwrap();
    assert_eq!(parse_contact_trace(&path).unwrap(), events);

    let rows = synth_ratings(
        &SynthRatings {
            users: 20,
            items: 30,
            ..SynthRatings::default()
        },
        &mut rng(4),
    );
    let path = dir.path().join("u.data");
    write_ratings(&rows, &path).unwrap();
    let gt = parse_ratings(&path, 4).unwrap();
    assert_eq!(gt, GroundTruthRatings::from_raw(&rows, 4).unwrap());

    assert!(matches!(
        parse_contact_trace(&dir.path().join("missing")),
        Err(TraceError::Io { .. })
    ));
}

#[test]
fn synthetic_trace_has_requested_means() {
    let (ic, dur) = (120.0, 15.0);
    let events = synth_trace(2, 3_000_000.0, ic, dur, &mut rng(11));
    assert!(events.len() >= 10_000, "{}", events.len());
    let durations: Vec<f64> = events.iter().map(ContactEvent::duration).collect();
    let gaps: Vec<f64> = events.windows(2).map(|w| w[1].start - w[0].end).collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    assert!(
        (mean(&gaps) - ic).abs() < 0.1 * ic,
        "gap mean {}",
        mean(&gaps)
    );
    assert!(
        (mean(&durations) - dur).abs() < 0.1 * dur,
        "duration mean {}",
        mean(&durations)
    );
    assert!(gaps.iter().all(|&g| g > 0.0));
}

#[test]
fn synthetic_trace_is_seeded() {
    let a = synth_trace(6, 20_000.0, 400.0, 20.0, &mut rng(5));
    let b = synth_trace(6, 20_000.0, 400.0, 20.0, &mut rng(5));
    let c = synth_trace(6, 20_000.0, 400.0, 20.0, &mut rng(6));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.iter().all(|e| e.node_a < e.node_b && e.end <= 20_000.0));
}

#[test]
fn malformed_lines_are_rejected() {
    for bad in [
        "1 2 3\n",
        "0 5 1 2 9\n",
        "5 5 1 2\n",
        "0 nan 1 2\n",
        "0 4 -1 2\n",
    ] {
        assert!(
            matches!(
                parse_contact_trace_str(bad),
                Err(TraceError::Parse { line: 1, .. })
            ),
            "{bad:?}"
        );
    }
    assert!(parse_raw_ratings_str("1\t2\t6\t0\n").is_err());
    assert!(parse_raw_ratings_str("1\t2\t3\n").is_err());
    let dup = "1\t2\t3\t0\n1\t2\t5\t9\n";
    assert!(matches!(
        GroundTruthRatings::from_raw(&parse_raw_ratings_str(dup).unwrap(), 4),
        Err(TraceError::Parse { line: 2, .. })
    ));
}

fn dataset(seed: u64) -> GroundTruthRatings {
    let shape = SynthRatings {
        users: 60,
        items: 80,
        density: 0.2,
        ..SynthRatings::default()
    };
    GroundTruthRatings::from_raw(&synth_ratings(&shape, &mut rng(seed)), 4).unwrap()
}

#[test]
fn reduction_keeps_exactly_the_sampled_block() {
    let full = dataset(1);
    for seed in 0..20 {
        let small = reduce_dataset(&full, 25, 30, &mut rng(seed)).unwrap();
        assert_eq!(small.users().len(), 25);
        assert_eq!(small.items().len(), 30);
        assert!(small.users().is_subset(full.users()));
        assert!(small.items().is_subset(full.items()));
        let want: Vec<(UserId, ItemId, bool)> = full
            .iter()
            .filter(|(u, i, _)| small.users().contains(u) && small.items().contains(i))
            .collect();
        assert_eq!(small.iter().collect::<Vec<_>>(), want);
        assert_eq!(
            small,
            reduce_dataset(&full, 25, 30, &mut rng(seed)).unwrap()
        );
    }
    assert!(matches!(
        reduce_dataset(&full, 61, 10, &mut rng(0)),
        Err(TraceError::Oversized { what: "users", .. })
    ));
}

#[test]
fn roles_are_reproducible_disjoint_and_eligible() {
    let gt = dataset(2);
    let contacts = synth_trace(30, 20_000.0, 2_000.0, 30.0, &mut rng(9));
    let ids: Vec<NodeId> = (0..30).map(NodeId).collect();
    let count = |n: NodeId| {
        contacts
            .iter()
            .filter(|c| c.node_a == n || c.node_b == n)
            .count() as u64
    };
    let mut counts: Vec<u64> = ids.iter().map(|&n| count(n)).collect();
    counts.sort();
    let median = counts[15];
    let rule = Eligibility {
        min_contacts: median,
        min_bytes: 0.0,
        bandwidth: 1e6,
    };
    let eligible = eligible_nodes(&ids, &contacts, &rule);
    let oracle: BTreeSet<NodeId> = ids
        .iter()
        .copied()
        .filter(|&n| count(n) >= median)
        .collect();
    assert_eq!(eligible, oracle);
    assert!(
        eligible.len() >= 10 && eligible.len() < 30,
        "{}",
        eligible.len()
    );

    let a = assign_roles(&ids, 3, 5, &gt, &contacts, &rule, &mut rng(7)).unwrap();
    let b = assign_roles(&ids, 3, 5, &gt, &contacts, &rule, &mut rng(7)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.publishers.len(), 3);
    assert_eq!(a.subscribers.len(), 5);
    let pubs: BTreeSet<_> = a.publishers.keys().copied().collect();
    let subs: BTreeSet<_> = a.subscribers.keys().copied().collect();
    assert!(pubs.is_disjoint(&subs));
    assert!(pubs.is_subset(&eligible) && subs.is_subset(&eligible));

    let mut items: Vec<ItemId> = a.publishers.values().flatten().copied().collect();
    items.sort();
    assert_eq!(items, gt.items().iter().copied().collect::<Vec<_>>());
    let sizes: Vec<usize> = a.publishers.values().map(Vec::len).collect();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

    let users = a.users();
    assert_eq!(users.len(), 5);
    assert!(users.is_subset(gt.users()));
    assert_eq!(a.node_of_user().len(), 5);

    let too_many = assign_roles(&ids, 5, 20, &gt, &contacts, &rule, &mut rng(7));
    assert!(matches!(
        too_many,
        Err(TraceError::InsufficientNodes { .. })
    ));
}
