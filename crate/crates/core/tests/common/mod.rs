#![allow(dead_code)]

use cofigel::{ItemId, RatingMatrix, UserId};
use proptest::prelude::*;

pub fn u(n: u32) -> UserId {
    UserId(n)
}

pub fn i(n: u32) -> ItemId {
    ItemId(n)
}

/// Dense grid; `None` is unrated. Users and items are numbered from 1.
pub type Grid = Vec<Vec<Option<bool>>>;

pub const WORKED_ROWS: [&str; 7] = [
    "1.....", "1.....", "11...1", ".1.111", "..11..", "1...11", "10..01",
];

pub fn grid_from_rows(rows: &[&str]) -> Grid {
    rows.iter()
        .map(|r| {
            r.chars()
                .map(|c| match c {
                    '1' => Some(true),
                    '0' => Some(false),
                    _ => None,
                })
                .collect()
        })
        .collect()
}

pub fn matrix_from_grid(grid: &Grid) -> RatingMatrix {
    let n_items = grid.first().map_or(0, Vec::len) as u32;
    let mut m = RatingMatrix::with_universe((1..=grid.len() as u32).map(u), (1..=n_items).map(i));
    for (ui, row) in grid.iter().enumerate() {
        for (ii, cell) in row.iter().enumerate() {
            if let Some(v) = cell {
                m.apply_rating(u(ui as u32 + 1), i(ii as u32 + 1), *v, 0.0)
                    .unwrap();
            }
        }
    }
    m
}

pub fn worked_matrix() -> RatingMatrix {
    matrix_from_grid(&grid_from_rows(&WORKED_ROWS))
}

/// Random grids up to 10 x 10 with a mix of positives, negatives and gaps.
pub fn grid_strategy() -> impl Strategy<Value = Grid> {
    (1usize..=10, 1usize..=10).prop_flat_map(|(nu, ni)| {
        prop::collection::vec(
            prop::collection::vec(
                prop_oneof![
                    3 => Just(None),
                    2 => Just(Some(true)),
                    1 => Just(Some(false)),
                ],
                ni,
            ),
            nu,
        )
    })
}

/// Brute-force cosine similarity over the dense grid, indices from 0.
pub fn oracle_sim(grid: &Grid, a: usize, b: usize) -> f64 {
    let (mut both, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for row in grid {
        let x = if row[a] == Some(true) { 1.0 } else { 0.0 };
        let y = if row[b] == Some(true) { 1.0 } else { 0.0 };
        both += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        both / (na * nb).sqrt()
    }
}

/// Sum of similarities to the user's liked items; `None` when rated or zero.
pub fn oracle_rank(grid: &Grid, user: usize, item: usize) -> Option<f64> {
    if grid[user][item].is_some() {
        return None;
    }
    let total: f64 = (0..grid[user].len())
        .filter(|&j| grid[user][j] == Some(true))
        .map(|j| oracle_sim(grid, item, j))
        .sum();
    (total > 0.0).then_some(total)
}

pub fn oracle_covered(grid: &Grid, user: usize, item: usize) -> bool {
    grid[user][item].is_some() || oracle_rank(grid, user, item).is_some()
}

/// Rates the pair positively on a copy and counts newly covered cells in the
/// item's column, plus the pair itself.
pub fn oracle_gain(grid: &Grid, user: usize, item: usize) -> usize {
    let mut after = grid.clone();
    after[user][item] = Some(true);
    1 + (0..grid.len())
        .filter(|&v| v != user)
        .filter(|&v| !oracle_covered(grid, v, item) && oracle_covered(&after, v, item))
        .count()
}

pub mod fixtures {
    use std::collections::BTreeMap;

    use cofigel::config::RatingsSource;
    use cofigel::config::{RunConfig, TraceSource};
    use cofigel::sim::{ContactEvent, Scenario, SimConfig};
    use cofigel::trace_io::{GroundTruthRatings, RoleAssignment, SynthRatings};
    use cofigel::utility::ContactStats;
    use cofigel::{ItemId, NodeId, UserId};

    pub const ITEM: u64 = 1_000;
    pub const BW: f64 = 100.0;

    /// 1 kB items at 100 B/s: one item per 10 s of contact.
    pub fn tiny_config() -> SimConfig {
        SimConfig {
            duration: 1_000.0,
            warmup: 0.0,
            cooldown: 0.0,
            item_size: ITEM,
            buffer_capacity: 10 * ITEM,
            bandwidth: BW,
            item_lifetime: 900.0,
            publish_rate_per_hour: 3_600.0,
            top_k: 2,
            bootstrap_fraction: 0.01,
            metadata_bytes: 0,
            report_interval: 250.0,
            prior: ContactStats {
                lambda: 0.01,
                bytes_per_contact: 1_000.0,
            },
        }
    }

    /// Publisher n0 with `items`, subscribers n1 = u1 and n2 = u2, relay n3.
    /// Both users like every item.
    pub fn tiny_scenario(items: &[u32], contacts: Vec<ContactEvent>) -> Scenario {
        let ids: Vec<ItemId> = items.iter().map(|&k| ItemId(k)).collect();
        let mut gt = GroundTruthRatings::new([UserId(1), UserId(2)], ids.iter().copied());
        for &item in &ids {
            gt.insert(UserId(1), item, true);
            gt.insert(UserId(2), item, true);
        }
        let roles = RoleAssignment {
            publishers: BTreeMap::from([(NodeId(0), ids)]),
            subscribers: BTreeMap::from([(NodeId(1), UserId(1)), (NodeId(2), UserId(2))]),
        };
        let mut sc = Scenario::new(roles, contacts, gt);
        if !sc.nodes.contains(&NodeId(3)) {
            sc.nodes.push(NodeId(3));
            sc.nodes.sort();
        }
        sc
    }

    pub fn contact(start: f64, end: f64, a: u32, b: u32) -> ContactEvent {
        ContactEvent::new(start, end, NodeId(a), NodeId(b))
    }

    /// Small synthetic setting: `nodes` nodes meeting often for `hours`.
    pub fn small_run_config(nodes: u32, hours: f64) -> RunConfig {
        RunConfig {
            trace: TraceSource::Synthetic {
                nodes,
                mean_intercontact: 1_800.0,
                mean_contact_duration: 40.0,
            },
            ratings: RatingsSource::Synthetic(SynthRatings {
                users: 80,
                items: 120,
                density: 0.15,
                ..SynthRatings::default()
            }),
            reduce_users: 40,
            reduce_items: 60,
            publishers: 3,
            subscribers: 10,
            publish_rate_per_hour: 20.0,
            item_size: 2_000_000,
            buffer_size: 40_000_000,
            bandwidth: 250_000.0,
            item_lifetime: 0.75 * hours * 3600.0,
            duration: hours * 3600.0,
            warmup: 0.0,
            cooldown: 0.0,
            report_interval: 300.0,
            min_contacts: 1,
            min_contact_items: 0.0,
            ..RunConfig::default()
        }
    }
}
