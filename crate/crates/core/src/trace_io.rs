//! Contact traces, rating datasets and the mapping between them.
//!
//! Contact trace format, one contact per line, `#` starts a comment:
//!
//! ```text
//! # start_seconds end_seconds node_a node_b
//! 0 22 1 2
//! ```
//!
//! Ratings use the MovieLens `u.data` layout: `user item rating timestamp`
//! separated by tabs (any whitespace is accepted).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::ids::{ItemId, NodeId, UserId};
use crate::sim::ContactEvent;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("requested {requested} {what}, only {available} available")]
    Oversized {
        what: &'static str,
        requested: usize,
        available: usize,
    },
    #[error(
        "need {needed} eligible nodes but only {available} have >= {min_contacts} contacts \
         and >= {min_bytes} contact bytes"
    )]
    InsufficientNodes {
        needed: usize,
        available: usize,
        min_contacts: u64,
        min_bytes: f64,
    },
}

fn read(path: &Path) -> Result<String, TraceError> {
    fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), TraceError> {
    fs::write(path, contents).map_err(|source| TraceError::Io {
        path: path.to_owned(),
        source,
    })
}

fn field<T: std::str::FromStr>(
    tok: Option<&str>,
    line: usize,
    name: &str,
) -> Result<T, TraceError> {
    let tok = tok.ok_or_else(|| TraceError::Parse {
        line,
        msg: format!("missing {name}"),
    })?;
    tok.parse().map_err(|_| TraceError::Parse {
        line,
        msg: format!("invalid {name} {tok:?}"),
    })
}

pub fn parse_contact_trace(path: &Path) -> Result<Vec<ContactEvent>, TraceError> {
    parse_contact_trace_str(&read(path)?)
}

pub fn parse_contact_trace_str(text: &str) -> Result<Vec<ContactEvent>, TraceError> {
    let mut by_pair: BTreeMap<(NodeId, NodeId), Vec<(f64, f64)>> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut toks = body.split_whitespace();
        let start: f64 = field(toks.next(), line, "start")?;
        let end: f64 = field(toks.next(), line, "end")?;
        let a: u32 = field(toks.next(), line, "node_a")?;
        let b: u32 = field(toks.next(), line, "node_b")?;
        if toks.next().is_some() {
            return Err(TraceError::Parse {
                line,
                msg: "trailing fields".into(),
            });
        }
        if !start.is_finite() || !end.is_finite() || end <= start {
            return Err(TraceError::Parse {
                line,
                msg: format!("end {end} must be after start {start}"),
            });
        }
        if a == b {
            return Err(TraceError::Parse {
                line,
                msg: format!("self-contact on node {a}"),
            });
        }
        let key = (NodeId(a.min(b)), NodeId(a.max(b)));
        by_pair.entry(key).or_default().push((start, end));
    }

    let mut events = Vec::new();
    for ((a, b), mut spans) in by_pair {
        spans.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
        let mut cur = spans[0];
        for &(s, e) in &spans[1..] {
            if s <= cur.1 {
                cur.1 = cur.1.max(e);
            } else {
                events.push(ContactEvent::new(cur.0, cur.1, a, b));
                cur = (s, e);
            }
        }
        events.push(ContactEvent::new(cur.0, cur.1, a, b));
    }
    sort_events(&mut events);
    Ok(events)
}

pub(crate) fn sort_events(events: &mut [ContactEvent]) {
    events.sort_by(|x, y| {
        x.start
            .total_cmp(&y.start)
            .then(x.node_a.cmp(&y.node_a))
            .then(x.node_b.cmp(&y.node_b))
    });
}

pub fn format_contact_trace(events: &[ContactEvent]) -> String {
    let mut out = String::from("# start_seconds end_seconds node_a node_b\n");
    for ev in events {
        let _ = writeln!(
            out,
            "{} {} {} {}",
            ev.start, ev.end, ev.node_a.0, ev.node_b.0
        );
    }
    out
}

pub fn write_contact_trace(events: &[ContactEvent], path: &Path) -> Result<(), TraceError> {
    write(path, &format_contact_trace(events))
}

/// Contacts per node pair with exponential inter-contact times and
/// exponential durations, truncated at `duration`.
pub fn synth_trace<R: Rng>(
    n_nodes: u32,
    duration: f64,
    mean_intercontact: f64,
    mean_contact_duration: f64,
    rng: &mut R,
) -> Vec<ContactEvent> {
    let gap = Exp::new(1.0 / mean_intercontact).expect("positive mean inter-contact time");
    let len = Exp::new(1.0 / mean_contact_duration).expect("positive mean contact duration");
    let mut events = Vec::new();
    for a in 0..n_nodes {
        for b in a + 1..n_nodes {
            let mut t = 0.0;
            loop {
                t += gap.sample(rng);
                if t >= duration {
                    break;
                }
                let end = (t + len.sample(rng).max(1e-3)).min(duration);
                if end > t {
                    events.push(ContactEvent::new(t, end, NodeId(a), NodeId(b)));
                }
                t = end;
            }
        }
    }
    sort_events(&mut events);
    events
}

/// One row of a MovieLens-style dataset, before binarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawRating {
    pub user: UserId,
    pub item: ItemId,
    pub stars: u8,
    pub timestamp: u64,
}

/// Binary ground-truth ratings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthRatings {
    ratings: BTreeMap<(UserId, ItemId), bool>,
    users: BTreeSet<UserId>,
    items: BTreeSet<ItemId>,
    likers: BTreeMap<ItemId, BTreeSet<UserId>>,
}

impl GroundTruthRatings {
    pub fn new(
        users: impl IntoIterator<Item = UserId>,
        items: impl IntoIterator<Item = ItemId>,
    ) -> Self {
        GroundTruthRatings {
            users: users.into_iter().collect(),
            items: items.into_iter().collect(),
            ..Self::default()
        }
    }

    /// Inserts a rating; false if the pair already had one.
    pub fn insert(&mut self, user: UserId, item: ItemId, positive: bool) -> bool {
        if self.ratings.contains_key(&(user, item)) {
            return false;
        }
        self.users.insert(user);
        self.items.insert(item);
        self.ratings.insert((user, item), positive);
        if positive {
            self.likers.entry(item).or_default().insert(user);
        }
        true
    }

    pub fn from_raw(rows: &[RawRating], threshold: u8) -> Result<Self, TraceError> {
        let mut gt = GroundTruthRatings::default();
        for (idx, r) in rows.iter().enumerate() {
            if !gt.insert(r.user, r.item, r.stars >= threshold) {
                return Err(TraceError::Parse {
                    line: idx + 1,
                    msg: format!("duplicate rating for ({}, {})", r.user, r.item),
                });
            }
        }
        Ok(gt)
    }

    pub fn get(&self, user: UserId, item: ItemId) -> Option<bool> {
        self.ratings.get(&(user, item)).copied()
    }

    pub fn likes(&self, user: UserId, item: ItemId) -> bool {
        self.get(user, item) == Some(true)
    }

    pub fn likers(&self, item: ItemId) -> impl Iterator<Item = UserId> + '_ {
        self.likers.get(&item).into_iter().flatten().copied()
    }

    pub fn users(&self) -> &BTreeSet<UserId> {
        &self.users
    }

    pub fn items(&self) -> &BTreeSet<ItemId> {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (UserId, ItemId, bool)> + '_ {
        self.ratings.iter().map(|(&(u, i), &v)| (u, i, v))
    }
}

pub fn parse_raw_ratings_str(text: &str) -> Result<Vec<RawRating>, TraceError> {
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut toks = raw.split_whitespace();
        let user: u32 = field(toks.next(), line, "user")?;
        let item: u32 = field(toks.next(), line, "item")?;
        let stars: u8 = field(toks.next(), line, "rating")?;
        let timestamp: u64 = field(toks.next(), line, "timestamp")?;
        if !(1..=5).contains(&stars) {
            return Err(TraceError::Parse {
                line,
                msg: format!("rating {stars} outside 1..=5"),
            });
        }
        rows.push(RawRating {
            user: UserId(user),
            item: ItemId(item),
            stars,
            timestamp,
        });
    }
    Ok(rows)
}

/// Parses and binarizes: `stars >= threshold` is a like.
pub fn parse_ratings_str(text: &str, threshold: u8) -> Result<GroundTruthRatings, TraceError> {
    GroundTruthRatings::from_raw(&parse_raw_ratings_str(text)?, threshold)
}

pub fn parse_ratings(path: &Path, threshold: u8) -> Result<GroundTruthRatings, TraceError> {
    parse_ratings_str(&read(path)?, threshold)
}

pub fn format_ratings(rows: &[RawRating]) -> String {
    let mut out = String::new();
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.user.0, r.item.0, r.stars, r.timestamp
        );
    }
    out
}

pub fn write_ratings(rows: &[RawRating], path: &Path) -> Result<(), TraceError> {
    write(path, &format_ratings(rows))
}

/// Shape of a synthetic MovieLens-like dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthRatings {
    pub users: u32,
    pub items: u32,
    /// Probability that a user rated a given item at all.
    pub density: f64,
    /// Taste groups; users mostly like items of their own group.
    pub groups: u32,
    /// Probability of a like (4-5 stars) within the user's group.
    pub in_group_like: f64,
    /// Probability of a like outside the user's group.
    pub out_group_like: f64,
}

impl Default for SynthRatings {
    fn default() -> Self {
        SynthRatings {
            users: 943,
            items: 1682,
            density: 0.063,
            groups: 8,
            in_group_like: 0.85,
            out_group_like: 0.2,
        }
    }
}

/// Clustered-taste ratings with ids starting at 1, as in MovieLens.
pub fn synth_ratings<R: Rng>(shape: &SynthRatings, rng: &mut R) -> Vec<RawRating> {
    let groups = shape.groups.max(1);
    let user_group: Vec<u32> = (0..shape.users)
        .map(|_| rng.random_range(0..groups))
        .collect();
    let item_group: Vec<u32> = (0..shape.items)
        .map(|_| rng.random_range(0..groups))
        .collect();
    let mut rows = Vec::new();
    for u in 0..shape.users {
        for i in 0..shape.items {
            if !rng.random_bool(shape.density) {
                continue;
            }
            let p_like = if user_group[u as usize] == item_group[i as usize] {
                shape.in_group_like
            } else {
                shape.out_group_like
            };
            let stars = if rng.random_bool(p_like) {
                rng.random_range(4..=5)
            } else {
                rng.random_range(1..=3)
            };
            rows.push(RawRating {
                user: UserId(u + 1),
                item: ItemId(i + 1),
                stars,
                timestamp: 874_724_710 + rng.random_range(0..20_000_000),
            });
        }
    }
    rows
}

fn sample_sorted<T: Copy + Ord, R: Rng>(
    pool: &BTreeSet<T>,
    n: usize,
    what: &'static str,
    rng: &mut R,
) -> Result<Vec<T>, TraceError> {
    if n > pool.len() {
        return Err(TraceError::Oversized {
            what,
            requested: n,
            available: pool.len(),
        });
    }
    let all: Vec<T> = pool.iter().copied().collect();
    let mut picked: Vec<T> = all.choose_multiple(rng, n).copied().collect();
    picked.sort();
    Ok(picked)
}

/// Uniform random user and item subsets; every rating inside the chosen
/// cross-product is kept.
pub fn reduce_dataset<R: Rng>(
    gt: &GroundTruthRatings,
    n_users: usize,
    n_items: usize,
    rng: &mut R,
) -> Result<GroundTruthRatings, TraceError> {
    let users = sample_sorted(gt.users(), n_users, "users", rng)?;
    let items = sample_sorted(gt.items(), n_items, "items", rng)?;
    let mut out = GroundTruthRatings::new(users.iter().copied(), items.iter().copied());
    let user_set: BTreeSet<_> = users.into_iter().collect();
    let item_set: BTreeSet<_> = items.into_iter().collect();
    for (u, i, v) in gt.iter() {
        if user_set.contains(&u) && item_set.contains(&i) {
            out.insert(u, i, v);
        }
    }
    Ok(out)
}

/// Nodes with too few contacts or too little contact capacity may relay
/// but are never publishers or subscribers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eligibility {
    pub min_contacts: u64,
    pub min_bytes: f64,
    /// Link bandwidth in bytes per second, to turn contact time into bytes.
    pub bandwidth: f64,
}

pub fn eligible_nodes(
    node_ids: &[NodeId],
    contacts: &[ContactEvent],
    rule: &Eligibility,
) -> BTreeSet<NodeId> {
    let mut tally: BTreeMap<NodeId, (u64, f64)> = BTreeMap::new();
    for ev in contacts {
        let bytes = ev.capacity(rule.bandwidth);
        for n in [ev.node_a, ev.node_b] {
            let t = tally.entry(n).or_default();
            t.0 += 1;
            t.1 += bytes;
        }
    }
    node_ids
        .iter()
        .copied()
        .filter(|n| {
            tally
                .get(n)
                .is_some_and(|&(c, b)| c >= rule.min_contacts && b >= rule.min_bytes)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoleAssignment {
    /// Publisher node and the items it will publish.
    pub publishers: BTreeMap<NodeId, Vec<ItemId>>,
    pub subscribers: BTreeMap<NodeId, UserId>,
}

impl RoleAssignment {
    pub fn user_of(&self, node: NodeId) -> Option<UserId> {
        self.subscribers.get(&node).copied()
    }

    pub fn node_of_user(&self) -> BTreeMap<UserId, NodeId> {
        self.subscribers.iter().map(|(&n, &u)| (u, n)).collect()
    }

    pub fn users(&self) -> BTreeSet<UserId> {
        self.subscribers.values().copied().collect()
    }
}

pub fn assign_roles<R: Rng>(
    node_ids: &[NodeId],
    n_publishers: usize,
    n_subscribers: usize,
    gt: &GroundTruthRatings,
    contacts: &[ContactEvent],
    rule: &Eligibility,
    rng: &mut R,
) -> Result<RoleAssignment, TraceError> {
    let eligible = eligible_nodes(node_ids, contacts, rule);
    let needed = n_publishers + n_subscribers;
    if eligible.len() < needed {
        return Err(TraceError::InsufficientNodes {
            needed,
            available: eligible.len(),
            min_contacts: rule.min_contacts,
            min_bytes: rule.min_bytes,
        });
    }
    let users = sample_sorted(gt.users(), n_subscribers, "users", rng)?;

    let mut nodes: Vec<NodeId> = eligible.into_iter().collect();
    nodes.shuffle(rng);
    let (pubs, rest) = nodes.split_at(n_publishers);
    let subs = &rest[..n_subscribers];

    let mut items: Vec<ItemId> = gt.items().iter().copied().collect();
    items.shuffle(rng);
    let mut publishers: BTreeMap<NodeId, Vec<ItemId>> =
        pubs.iter().map(|&n| (n, Vec::new())).collect();
    if !pubs.is_empty() {
        for (k, item) in items.into_iter().enumerate() {
            publishers
                .get_mut(&pubs[k % pubs.len()])
                .unwrap()
                .push(item);
        }
    }

    let mut shuffled_users = users;
    shuffled_users.shuffle(rng);
    let subscribers = subs.iter().copied().zip(shuffled_users).collect();
    Ok(RoleAssignment {
        publishers,
        subscribers,
    })
}
