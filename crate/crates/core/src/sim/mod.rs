//! Deterministic trace-driven event loop.
//!
//! Publishes, expiries, contacts and metric snapshots are replayed in
//! timestamp order. Each contact first exchanges metadata (rating matrices,
//! queue positions, contact history), then each side pushes whole items in
//! its scheduler's order until the contact's capacity runs out.

mod log;
mod node;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cf::{CfError, Label, RatingMatrix};
use crate::ids::{ItemId, NodeId, UserId};
use crate::metrics::{self, MeasurementWindow, Snapshot};
use crate::sched::{self, KeyContext, Keyer, Oracle, SchedError, SchedulerKind};
use crate::trace_io::{GroundTruthRatings, RoleAssignment};
use crate::utility::ContactStats;

pub use log::{ContactRecord, DeliveryRecord, TransferLog, TransferRecord};
pub use node::{enforce_buffer, expire_items, BufferDecision, NodeState, Role, Store};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("contact trace is not sorted by start time (event {0})")]
    UnsortedTrace(usize),
    #[error("contact references node {0} outside the scenario")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error(transparent)]
    Cf(#[from] CfError),
}

/// A timed bidirectional link between two nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactEvent {
    pub start: f64,
    pub end: f64,
    pub node_a: NodeId,
    pub node_b: NodeId,
}

impl ContactEvent {
    pub fn new(start: f64, end: f64, node_a: NodeId, node_b: NodeId) -> Self {
        ContactEvent {
            start,
            end,
            node_a,
            node_b,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Bytes transferable in each direction.
    pub fn capacity(&self, bandwidth: f64) -> f64 {
        self.duration() * bandwidth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub id: ItemId,
    pub publisher: NodeId,
    pub publish_time: f64,
    pub size: u64,
    pub expiry_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Seconds.
    pub duration: f64,
    pub warmup: f64,
    pub cooldown: f64,
    pub item_size: u64,
    pub buffer_capacity: u64,
    /// Link bandwidth in bytes per second.
    pub bandwidth: f64,
    pub item_lifetime: f64,
    pub publish_rate_per_hour: f64,
    pub top_k: usize,
    pub bootstrap_fraction: f64,
    pub metadata_bytes: u64,
    pub report_interval: f64,
    /// Contact statistics assumed before a node's first contact.
    pub prior: ContactStats,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("duration", self.duration),
            ("item_size", self.item_size as f64),
            ("buffer_capacity", self.buffer_capacity as f64),
            ("bandwidth", self.bandwidth),
            ("item_lifetime", self.item_lifetime),
            ("publish_rate_per_hour", self.publish_rate_per_hour),
            ("top_k", self.top_k as f64),
            ("report_interval", self.report_interval),
            ("prior.lambda", self.prior.lambda),
            ("prior.bytes_per_contact", self.prior.bytes_per_contact),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.warmup < 0.0 || self.cooldown < 0.0 {
            return Err(SimError::Config("warmup and cooldown must be >= 0".into()));
        }
        if self.warmup + self.cooldown >= self.duration {
            return Err(SimError::Config(format!(
                "warmup ({}) + cooldown ({}) must be shorter than duration ({})",
                self.warmup, self.cooldown, self.duration
            )));
        }
        if !(0.0..=1.0).contains(&self.bootstrap_fraction) {
            return Err(SimError::Config(format!(
                "bootstrap_fraction must be in [0, 1], got {}",
                self.bootstrap_fraction
            )));
        }
        Ok(())
    }

    pub fn window(&self) -> MeasurementWindow {
        MeasurementWindow {
            start: self.warmup,
            end: self.duration - self.cooldown,
        }
    }
}

/// Everything a run replays: who is who, when they meet, what users like.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub nodes: Vec<NodeId>,
    pub roles: RoleAssignment,
    pub contacts: Vec<ContactEvent>,
    pub ground_truth: GroundTruthRatings,
}

impl Scenario {
    /// Node set is every node named by the roles or the trace.
    pub fn new(
        roles: RoleAssignment,
        contacts: Vec<ContactEvent>,
        ground_truth: GroundTruthRatings,
    ) -> Self {
        let mut nodes: BTreeSet<NodeId> = roles.publishers.keys().copied().collect();
        nodes.extend(roles.subscribers.keys().copied());
        for ev in &contacts {
            nodes.insert(ev.node_a);
            nodes.insert(ev.node_b);
        }
        Scenario {
            nodes: nodes.into_iter().collect(),
            roles,
            contacts,
            ground_truth,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub scheduler: SchedulerKind,
    pub seed: u64,
    pub duration: f64,
    pub log: TransferLog,
    pub nodes: Vec<NodeState>,
    /// Every published item.
    pub items: BTreeMap<ItemId, Item>,
    pub snapshots: Vec<Snapshot>,
    /// Union of all ratings revealed anywhere.
    pub revealed: RatingMatrix,
    pub users: BTreeSet<UserId>,
    pub window: MeasurementWindow,
    pub top_k: usize,
}

impl SimResult {
    /// Published items inside the measurement window.
    pub fn measured_items(&self) -> BTreeSet<ItemId> {
        self.items
            .values()
            .filter(|it| self.window.contains(it.publish_time))
            .map(|it| it.id)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Expire(ItemId),
    Publish(NodeId, ItemId),
    Contact(usize),
    Snapshot,
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::Expire(_) => 0,
            EventKind::Publish(..) => 1,
            EventKind::Contact(_) => 2,
            EventKind::Snapshot => 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: EventKind,
    tie: (u32, u32, u32),
}

/// Shared, non-node state of a run.
struct World<'s> {
    cfg: &'s SimConfig,
    kind: SchedulerKind,
    gt: &'s GroundTruthRatings,
    items: BTreeMap<ItemId, Item>,
    holdings: BTreeMap<ItemId, BTreeSet<NodeId>>,
    revealed: RatingMatrix,
    user_node: BTreeMap<UserId, NodeId>,
    users: BTreeSet<UserId>,
    delivered: BTreeSet<(ItemId, UserId)>,
    log: TransferLog,
    snapshots: Vec<Snapshot>,
}

impl<'s> World<'s> {
    fn ctx(&self, now: f64) -> KeyContext<'_> {
        KeyContext {
            now,
            items: &self.items,
            n_users: self.users.len(),
            user_node: &self.user_node,
            top_k: self.cfg.top_k,
            bootstrap_fraction: self.cfg.bootstrap_fraction,
            global: self.kind.uses_global_matrix().then_some(&self.revealed),
            oracle: self.kind.uses_ground_truth().then_some(Oracle {
                ground_truth: self.gt,
                holdings: &self.holdings,
            }),
        }
    }

    fn drop_holding(&mut self, item: ItemId, node: NodeId) {
        if let Some(h) = self.holdings.get_mut(&item) {
            h.remove(&node);
        }
    }

    /// Admits `item` to `node`'s buffer, evicting by the active policy's
    /// peer-independent key.
    fn admit(&mut self, node: &mut NodeState, item: &Item, now: f64) -> bool {
        let decision = {
            let ctx = self.ctx(now);
            let kind = self.kind;
            enforce_buffer(node, item, now, &self.items, |n, i| {
                // Key errors only arise from inputs validated before the run.
                Keyer::new(kind, n, None, ctx)
                    .and_then(|k| k.key(i))
                    .unwrap_or(0.0)
            })
        };
        for i in &decision.evicted {
            self.drop_holding(*i, node.id);
        }
        decision.accepted
    }
}

fn pair_mut(nodes: &mut [NodeState], a: usize, b: usize) -> (&mut NodeState, &mut NodeState) {
    assert_ne!(a, b, "contact endpoints must differ");
    if a < b {
        let (lo, hi) = nodes.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = nodes.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

/// Reveals the user's ground-truth rating for a just-delivered item and
/// marks it watched. Returns the delivery record for subscribers.
/// `label_matrix` overrides the node's own matrix for the predicted label.
pub fn reveal_rating(
    node: &mut NodeState,
    item: &Item,
    now: f64,
    ground_truth: &GroundTruthRatings,
    label_matrix: Option<&RatingMatrix>,
    top_k: usize,
) -> Result<Option<DeliveryRecord>, CfError> {
    let Some(user) = node.user() else {
        return Ok(None);
    };
    let predicted_positive = label_matrix
        .unwrap_or(&node.matrix)
        .predict_user(user, top_k)
        .iter()
        .any(|p| p.item == item.id && p.label == Label::Positive);
    if !node.matrix.is_rated(user, item.id) {
        if let Some(liked) = ground_truth.get(user, item.id) {
            node.matrix.apply_rating(user, item.id, liked, now)?;
        }
    }
    node.move_to(item.id, Store::Archive);
    Ok(Some(DeliveryRecord {
        time: now,
        item: item.id,
        user,
        node: node.id,
        predicted_positive,
        latency: now - item.publish_time,
    }))
}

pub fn run(
    cfg: &SimConfig,
    scenario: &Scenario,
    kind: SchedulerKind,
    seed: u64,
) -> Result<SimResult, SimError> {
    cfg.validate()?;
    let index: BTreeMap<NodeId, usize> = scenario
        .nodes
        .iter()
        .enumerate()
        .map(|(k, &n)| (n, k))
        .collect();
    for (k, pair) in scenario.contacts.windows(2).enumerate() {
        if pair[1].start < pair[0].start {
            return Err(SimError::UnsortedTrace(k + 1));
        }
    }
    for ev in &scenario.contacts {
        for n in [ev.node_a, ev.node_b] {
            if !index.contains_key(&n) {
                return Err(SimError::UnknownNode(n));
            }
        }
    }
    for n in scenario
        .roles
        .publishers
        .keys()
        .chain(scenario.roles.subscribers.keys())
    {
        if !index.contains_key(n) {
            return Err(SimError::UnknownNode(*n));
        }
    }

    let roles = &scenario.roles;
    let users = roles.users();
    let catalog: BTreeSet<ItemId> = roles.publishers.values().flatten().copied().collect();
    let base = RatingMatrix::with_universe(users.iter().copied(), catalog.iter().copied());

    let mut nodes: Vec<NodeState> = scenario
        .nodes
        .iter()
        .map(|&id| {
            let role = if let Some(u) = roles.user_of(id) {
                Role::Subscriber(u)
            } else if roles.publishers.contains_key(&id) {
                Role::Publisher
            } else {
                Role::Relay
            };
            NodeState::new(id, role, cfg.buffer_capacity, base.clone(), cfg.prior)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let interval = 3600.0 / cfg.publish_rate_per_hour;
    for (&publisher, pool) in &roles.publishers {
        let mut order = pool.clone();
        order.shuffle(&mut rng);
        for (k, item) in order.into_iter().enumerate() {
            let t = k as f64 * interval;
            if t >= cfg.duration {
                break;
            }
            events.push(Event {
                time: t,
                kind: EventKind::Publish(publisher, item),
                tie: (publisher.0, 0, item.0),
            });
            events.push(Event {
                time: t + cfg.item_lifetime,
                kind: EventKind::Expire(item),
                tie: (0, 0, item.0),
            });
        }
    }
    for (k, ev) in scenario.contacts.iter().enumerate() {
        events.push(Event {
            time: ev.start,
            kind: EventKind::Contact(k),
            tie: (ev.node_a.0, ev.node_b.0, k as u32),
        });
    }
    let mut t = cfg.report_interval;
    while t < cfg.duration {
        events.push(Event {
            time: t,
            kind: EventKind::Snapshot,
            tie: (0, 0, 0),
        });
        t += cfg.report_interval;
    }
    events.push(Event {
        time: cfg.duration,
        kind: EventKind::Snapshot,
        tie: (0, 0, 0),
    });
    events.sort_by(|x, y| {
        x.time
            .total_cmp(&y.time)
            .then(x.kind.rank().cmp(&y.kind.rank()))
            .then(x.tie.cmp(&y.tie))
    });

    let mut world = World {
        cfg,
        kind,
        gt: &scenario.ground_truth,
        items: BTreeMap::new(),
        holdings: BTreeMap::new(),
        revealed: base,
        user_node: roles.node_of_user(),
        users,
        delivered: BTreeSet::new(),
        log: TransferLog::default(),
        snapshots: Vec::new(),
    };

    for ev in events {
        if ev.time > cfg.duration {
            break;
        }
        match ev.kind {
            EventKind::Expire(item) => {
                let holders: Vec<NodeId> = world
                    .holdings
                    .get(&item)
                    .map(|h| h.iter().copied().collect())
                    .unwrap_or_default();
                for n in holders {
                    let node = &mut nodes[index[&n]];
                    for gone in expire_items(node, ev.time, &world.items) {
                        world.drop_holding(gone, n);
                    }
                }
            }
            EventKind::Publish(publisher, id) => {
                let item = Item {
                    id,
                    publisher,
                    publish_time: ev.time,
                    size: cfg.item_size,
                    expiry_time: ev.time + cfg.item_lifetime,
                };
                world.items.insert(id, item.clone());
                let node = &mut nodes[index[&publisher]];
                let tail = node.queued_bytes(&world.items, ev.time);
                if world.admit(node, &item, ev.time) {
                    node.insert(&item, Store::Outbox);
                    node.sigma.record(id, publisher, tail, ev.time);
                    world.holdings.entry(id).or_default().insert(publisher);
                }
            }
            EventKind::Contact(k) => {
                let c = scenario.contacts[k];
                process_contact(
                    &mut world,
                    &mut nodes,
                    index[&c.node_a],
                    index[&c.node_b],
                    &c,
                )?;
            }
            EventKind::Snapshot => {
                let measured: BTreeSet<ItemId> = world
                    .items
                    .values()
                    .filter(|it| cfg.window().contains(it.publish_time))
                    .map(|it| it.id)
                    .collect();
                world.snapshots.push(metrics::snapshot(
                    ev.time,
                    &world.revealed,
                    &world.users,
                    &measured,
                    world.gt,
                    cfg.top_k,
                ));
            }
        }
    }

    Ok(SimResult {
        scheduler: kind,
        seed,
        duration: cfg.duration,
        log: world.log,
        nodes,
        items: world.items,
        snapshots: world.snapshots,
        revealed: world.revealed,
        users: world.users,
        window: cfg.window(),
        top_k: cfg.top_k,
    })
}

/// Metadata exchange, then one transfer pass per direction.
fn process_contact(
    world: &mut World<'_>,
    nodes: &mut [NodeState],
    ia: usize,
    ib: usize,
    ev: &ContactEvent,
) -> Result<(), SimError> {
    let now = ev.start;
    let capacity = ev.capacity(world.cfg.bandwidth);
    for idx in [ia, ib] {
        let id = nodes[idx].id;
        for gone in expire_items(&mut nodes[idx], now, &world.items) {
            world.drop_holding(gone, id);
        }
    }

    let meta = world.cfg.metadata_bytes;
    let mut record = ContactRecord {
        start: ev.start,
        end: ev.end,
        node_a: ev.node_a,
        node_b: ev.node_b,
        capacity,
        metadata_bytes: 0,
        sent_a_to_b: 0,
        sent_b_to_a: 0,
    };
    if meta as f64 > capacity {
        world.log.contacts.push(record);
        return Ok(());
    }
    record.metadata_bytes = meta;
    {
        let (a, b) = pair_mut(nodes, ia, ib);
        a.matrix.merge_from(&b.matrix);
        b.matrix.merge_from(&a.matrix);
        a.sigma.merge_from(&b.sigma);
        b.sigma.merge_from(&a.sigma);
        a.contacts.observe(capacity);
        b.contacts.observe(capacity);
    }

    let budget = capacity - meta as f64;
    let start = now + meta as f64 / world.cfg.bandwidth;
    record.sent_a_to_b = push_items(world, nodes, ia, ib, budget, start)?;
    record.sent_b_to_a = push_items(world, nodes, ib, ia, budget, start)?;
    world.log.contacts.push(record);
    Ok(())
}

/// Sends whole items from `from` to `to` in queue order. A transfer that
/// would not complete within the remaining budget is abandoned along with
/// the rest of the queue. Returns bytes sent.
fn push_items(
    world: &mut World<'_>,
    nodes: &mut [NodeState],
    from: usize,
    to: usize,
    budget: f64,
    start: f64,
) -> Result<u64, SimError> {
    let queue = sched::order_queue(&nodes[from], &nodes[to], world.kind, world.ctx(start))?;
    let sender_id = nodes[from].id;
    let mut offset = 0;
    for &item in &queue {
        nodes[from].sigma.record(item, sender_id, offset, start);
        offset += world.items[&item].size;
    }
    nodes[from].transfer_queue = queue.clone();

    let bandwidth = world.cfg.bandwidth;
    let mut residual = budget;
    let mut clock = start;
    let mut sent = 0;
    for id in queue {
        let item = world.items[&id].clone();
        if item.size as f64 > residual {
            break;
        }
        let done = clock + item.size as f64 / bandwidth;
        if item.expiry_time <= done || nodes[to].holds(id) {
            continue;
        }
        let receiver = &mut nodes[to];
        let tail = receiver.queued_bytes(&world.items, done);
        if !world.admit(receiver, &item, done) {
            continue;
        }
        residual -= item.size as f64;
        clock = done;
        sent += item.size;

        receiver.insert(&item, Store::Inbox);
        receiver.sigma.record(id, receiver.id, tail, done);
        world.holdings.entry(id).or_default().insert(receiver.id);
        world.log.transfers.push(TransferRecord {
            time: done,
            from: sender_id,
            to: receiver.id,
            item: id,
            bytes: item.size,
        });

        let Some(user) = receiver.user() else {
            continue;
        };
        if world.delivered.contains(&(id, user)) {
            continue;
        }
        let label_matrix = world.kind.uses_global_matrix().then_some(&world.revealed);
        if let Some(rec) = reveal_rating(
            receiver,
            &item,
            done,
            world.gt,
            label_matrix,
            world.cfg.top_k,
        )? {
            world.delivered.insert((id, user));
            world.log.deliveries.push(rec);
        }
        sched::global_matrix_sync(std::iter::once(&*receiver), &mut world.revealed);
    }
    Ok(sent)
}
