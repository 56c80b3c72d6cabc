use std::collections::BTreeMap;

use crate::cf::RatingMatrix;
use crate::ids::{ItemId, NodeId, UserId};
use crate::utility::{ContactHistory, ContactStats, QueuePositionMatrix};

use super::Item;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Publisher,
    Subscriber(UserId),
    Relay,
}

/// Where a stored item lives on a device.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Store {
    /// Published by this node.
    Outbox,
    /// Received, not yet watched.
    Inbox,
    /// Watched. Never evicted while live.
    Archive,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub role: Role,
    stored: BTreeMap<ItemId, (Store, u64)>,
    buffer_used: u64,
    pub buffer_capacity: u64,
    pub matrix: RatingMatrix,
    pub sigma: QueuePositionMatrix,
    pub contacts: ContactHistory,
    /// Most recent queue order computed for a peer.
    pub transfer_queue: Vec<ItemId>,
}

impl NodeState {
    pub fn new(
        id: NodeId,
        role: Role,
        buffer_capacity: u64,
        matrix: RatingMatrix,
        prior: ContactStats,
    ) -> Self {
        NodeState {
            id,
            role,
            stored: BTreeMap::new(),
            buffer_used: 0,
            buffer_capacity,
            matrix,
            sigma: QueuePositionMatrix::new(),
            contacts: ContactHistory::new(prior),
            transfer_queue: Vec::new(),
        }
    }

    pub fn user(&self) -> Option<UserId> {
        match self.role {
            Role::Subscriber(u) => Some(u),
            _ => None,
        }
    }

    pub fn holds(&self, item: ItemId) -> bool {
        self.stored.contains_key(&item)
    }

    pub fn store_of(&self, item: ItemId) -> Option<Store> {
        self.stored.get(&item).map(|&(s, _)| s)
    }

    pub fn items_in(&self, store: Store) -> impl Iterator<Item = ItemId> + '_ {
        self.stored
            .iter()
            .filter(move |(_, &(s, _))| s == store)
            .map(|(&i, _)| i)
    }

    pub fn stored_items(&self) -> impl Iterator<Item = (ItemId, Store)> + '_ {
        self.stored.iter().map(|(&i, &(s, _))| (i, s))
    }

    pub fn buffer_used(&self) -> u64 {
        self.buffer_used
    }

    pub fn free_bytes(&self) -> u64 {
        self.buffer_capacity.saturating_sub(self.buffer_used)
    }

    /// Stored items that have not expired by `now`.
    pub fn forwardable<'a>(
        &'a self,
        items: &'a BTreeMap<ItemId, Item>,
        now: f64,
    ) -> impl Iterator<Item = ItemId> + 'a {
        self.stored
            .keys()
            .copied()
            .filter(move |i| items.get(i).is_some_and(|it| it.expiry_time > now))
    }

    /// Total bytes of forwardable items, i.e. the tail of a FIFO queue.
    pub fn queued_bytes(&self, items: &BTreeMap<ItemId, Item>, now: f64) -> u64 {
        self.forwardable(items, now)
            .map(|i| self.stored[&i].1)
            .sum()
    }

    /// Stores `item` without any admission check; the caller has already
    /// made room.
    pub fn insert(&mut self, item: &Item, store: Store) {
        debug_assert!(self.buffer_used + item.size <= self.buffer_capacity);
        if let Some((_, size)) = self.stored.insert(item.id, (store, item.size)) {
            self.buffer_used -= size;
        }
        self.buffer_used += item.size;
    }

    pub(crate) fn remove(&mut self, item: ItemId) -> bool {
        match self.stored.remove(&item) {
            Some((_, size)) => {
                self.buffer_used -= size;
                self.transfer_queue.retain(|&i| i != item);
                true
            }
            None => false,
        }
    }

    pub(crate) fn move_to(&mut self, item: ItemId, store: Store) {
        if let Some(entry) = self.stored.get_mut(&item) {
            entry.0 = store;
        }
    }
}

/// Drops expired items from the outbox and inbox. Archived items stay on
/// the device but are no longer forwardable. Returns the removed items.
pub fn expire_items(node: &mut NodeState, now: f64, items: &BTreeMap<ItemId, Item>) -> Vec<ItemId> {
    let expired: Vec<ItemId> = node
        .stored
        .iter()
        .filter(|(i, (store, _))| {
            *store != Store::Archive && items.get(i).is_none_or(|it| it.expiry_time <= now)
        })
        .map(|(&i, _)| i)
        .collect();
    for &i in &expired {
        node.remove(i);
    }
    expired
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BufferDecision {
    pub accepted: bool,
    pub evicted: Vec<ItemId>,
}

/// Makes room for `incoming` if possible. Expired items go first, then
/// outbox/inbox items whose utility is strictly below the incoming item's,
/// lowest first. Nothing but expired items is evicted when the incoming item
/// cannot fit anyway.
pub fn enforce_buffer(
    node: &mut NodeState,
    incoming: &Item,
    now: f64,
    items: &BTreeMap<ItemId, Item>,
    mut utility: impl FnMut(&NodeState, ItemId) -> f64,
) -> BufferDecision {
    let mut decision = BufferDecision::default();
    if incoming.size > node.buffer_capacity {
        return decision;
    }
    if node.free_bytes() >= incoming.size {
        decision.accepted = true;
        return decision;
    }

    let expired: Vec<ItemId> = node
        .stored
        .keys()
        .copied()
        .filter(|i| items.get(i).is_none_or(|it| it.expiry_time <= now))
        .collect();
    for i in expired {
        node.remove(i);
        decision.evicted.push(i);
    }
    if node.free_bytes() >= incoming.size {
        decision.accepted = true;
        return decision;
    }

    let threshold = utility(node, incoming.id);
    let mut candidates: Vec<(ItemId, f64, u64)> = node
        .stored
        .iter()
        .filter(|(_, (store, _))| *store != Store::Archive)
        .map(|(&i, &(_, size))| (i, utility(node, i), size))
        .filter(|&(_, u, _)| u < threshold)
        .collect();
    candidates.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let reclaimable: u64 = candidates.iter().map(|c| c.2).sum();
    if node.free_bytes() + reclaimable < incoming.size {
        return decision;
    }
    for (i, _, _) in candidates {
        if node.free_bytes() >= incoming.size {
            break;
        }
        node.remove(i);
        decision.evicted.push(i);
    }
    decision.accepted = true;
    decision
}
