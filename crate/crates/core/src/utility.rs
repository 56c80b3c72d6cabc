//! Transfer utility: expected positive ratings, scaled by a concentration
//! bound on rating gain and by the chance of reaching targets before expiry.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::ids::{ItemId, NodeId, UserId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UtilityError {
    #[error("item {0} has no known holder")]
    NoHolders(ItemId),
    #[error("contact service rate must be positive, got {0}")]
    NoServiceRate(f64),
}

/// Locally known statistics for one item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemStats {
    pub item: ItemId,
    /// Total number of users.
    pub n: usize,
    /// Users for which the item is currently predicted positive.
    pub g_plus: usize,
    /// Confirmed positive ratings, floored by the bootstrap value.
    pub r_plus: usize,
    /// Nodes known to store the item.
    pub holders: BTreeSet<NodeId>,
    /// Users the item should still reach.
    pub targets: BTreeSet<UserId>,
}

/// Smallest r⁺ used before enough ratings have been observed.
pub fn bootstrap_floor(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).ceil() as usize).max(1)
}

/// Observed positives replace the floor once they exceed it.
pub fn effective_r_plus(observed: usize, n: usize, fraction: f64) -> usize {
    observed.max(bootstrap_floor(n, fraction)).min(n)
}

/// Upper bound on the probability that transferring the item increases its
/// number of correct positive predictions, with E[Ω] estimated by r⁺.
/// Returns 0 once every user has rated the item positively.
pub fn rating_gain_bound(stats: &ItemStats) -> f64 {
    let n = stats.n as f64;
    let r = stats.r_plus as f64;
    let g = stats.g_plus as f64;
    if stats.r_plus >= stats.n {
        return 0.0;
    }
    let log_bound = r * r / (n - r) + (r + g) * (1.0 - r / n).ln();
    log_bound.exp().min(1.0)
}

/// Per-node contact rate and per-contact capacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactStats {
    /// Contacts per second.
    pub lambda: f64,
    pub bytes_per_contact: f64,
}

impl ContactStats {
    /// Bytes per second a node can push on average.
    pub fn service_rate(&self) -> f64 {
        self.lambda * self.bytes_per_contact
    }
}

/// Running contact history of a single node.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactHistory {
    prior: ContactStats,
    contacts: u64,
    total_bytes: f64,
}

impl ContactHistory {
    pub fn new(prior: ContactStats) -> Self {
        ContactHistory {
            prior,
            contacts: 0,
            total_bytes: 0.0,
        }
    }

    pub fn observe(&mut self, capacity_bytes: f64) {
        self.contacts += 1;
        self.total_bytes += capacity_bytes;
    }

    pub fn contacts(&self) -> u64 {
        self.contacts
    }

    /// Estimates at `elapsed` seconds since the start of observation; the
    /// prior is used until the first contact.
    pub fn estimate(&self, elapsed: f64) -> ContactStats {
        if self.contacts == 0 || elapsed <= 0.0 || self.total_bytes <= 0.0 {
            return self.prior;
        }
        ContactStats {
            lambda: self.contacts as f64 / elapsed,
            bytes_per_contact: self.total_bytes / self.contacts as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueObservation {
    pub bytes: u64,
    pub at: f64,
}

/// Last known byte offset of each item in each holder's transfer queue.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueuePositionMatrix {
    entries: BTreeMap<(ItemId, NodeId), QueueObservation>,
}

impl QueuePositionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, item: ItemId, node: NodeId, bytes: u64, at: f64) {
        self.upsert(item, node, QueueObservation { bytes, at });
    }

    fn upsert(&mut self, item: ItemId, node: NodeId, obs: QueueObservation) -> bool {
        match self.entries.get_mut(&(item, node)) {
            Some(cur) => {
                let fresher = obs.at > cur.at || (obs.at == cur.at && obs.bytes > cur.bytes);
                if fresher {
                    *cur = obs;
                }
                fresher
            }
            None => {
                self.entries.insert((item, node), obs);
                true
            }
        }
    }

    pub fn get(&self, item: ItemId, node: NodeId) -> Option<QueueObservation> {
        self.entries.get(&(item, node)).copied()
    }

    /// Nodes with any observation for `item`.
    pub fn holders(&self, item: ItemId) -> impl Iterator<Item = NodeId> + '_ {
        self.entries
            .range((item, NodeId(0))..=(item, NodeId(u32::MAX)))
            .map(|(&(_, node), _)| node)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Freshest observation per (item, node) wins.
    pub fn merge_from(&mut self, other: &QueuePositionMatrix) -> bool {
        let mut changed = false;
        for (&(item, node), &obs) in &other.entries {
            changed |= self.upsert(item, node, obs);
        }
        changed
    }
}

/// Mean time for the item to reach the head of its holders' queues.
/// Missing observations count as position 0.
pub fn mean_wait(
    sigma: &QueuePositionMatrix,
    item: ItemId,
    cs: &ContactStats,
    holders: &BTreeSet<NodeId>,
) -> Result<f64, UtilityError> {
    if holders.is_empty() {
        return Err(UtilityError::NoHolders(item));
    }
    let rate = cs.service_rate();
    if rate.is_nan() || rate <= 0.0 {
        return Err(UtilityError::NoServiceRate(rate));
    }
    let total: f64 = holders
        .iter()
        .map(|&v| sigma.get(item, v).map_or(0.0, |o| o.bytes as f64))
        .sum();
    Ok(total / (rate * holders.len() as f64))
}

/// Lower bound on the probability of reaching all targets before the
/// deadline; 0 for an expired item.
pub fn delivery_factor(mu: f64, n_targets: usize, t_remaining: f64) -> f64 {
    if t_remaining <= 0.0 {
        return 0.0;
    }
    1.0 - (n_targets as f64 * mu / t_remaining).min(1.0)
}

/// (g⁺ + r⁺)·G·D. Only the relative order of utilities is meaningful.
pub fn utility(
    stats: &ItemStats,
    sigma: &QueuePositionMatrix,
    cs: &ContactStats,
    t_remaining: f64,
) -> Result<f64, UtilityError> {
    if t_remaining <= 0.0 {
        return Ok(0.0);
    }
    let mu = mean_wait(sigma, stats.item, cs, &stats.holders)?;
    let d = delivery_factor(mu, stats.targets.len(), t_remaining);
    Ok((stats.g_plus + stats.r_plus) as f64 * rating_gain_bound(stats) * d)
}
