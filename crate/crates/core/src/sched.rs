//! Transfer-queue ordering policies.
//!
//! Every policy sorts the same eligible set (the sender's unexpired items the
//! peer lacks) by a policy-specific key, descending, ties by ascending item
//! id. Policies only see the inputs they are entitled to: ground truth is
//! reachable only through [`Oracle`], which the engine hands out for
//! [`SchedulerKind::GroundTruth`] alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::cf::{PredictionSummary, RatingMatrix};
use crate::ids::{ItemId, NodeId, UserId};
use crate::sim::{Item, NodeState};
use crate::trace_io::GroundTruthRatings;
use crate::utility::{self, ItemStats, UtilityError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedError {
    #[error("unknown scheduler {0:?} (expected one of {names})", names = SchedulerKind::NAMES.join(", "))]
    UnknownKind(String),
    #[error("{0} needs {1}, which the engine did not provide")]
    MissingInput(SchedulerKind, &'static str),
    #[error(transparent)]
    Utility(#[from] UtilityError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SchedulerKind {
    CoFiGel,
    CoFiGel3G,
    NoDeliveryTime,
    NoCoverage,
    NoItemRecall,
    GroundTruth,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 6] = [
        SchedulerKind::CoFiGel,
        SchedulerKind::CoFiGel3G,
        SchedulerKind::NoDeliveryTime,
        SchedulerKind::NoCoverage,
        SchedulerKind::NoItemRecall,
        SchedulerKind::GroundTruth,
    ];

    pub const NAMES: [&'static str; 6] = [
        "cofigel",
        "cofigel3g",
        "no-delivery-time",
        "no-coverage",
        "no-item-recall",
        "ground-truth",
    ];

    pub fn name(self) -> &'static str {
        let idx = Self::ALL.iter().position(|&k| k == self).unwrap();
        Self::NAMES[idx]
    }

    /// Whether the policy ranks with a centrally synchronized matrix.
    pub fn uses_global_matrix(self) -> bool {
        self == SchedulerKind::CoFiGel3G
    }

    pub fn uses_ground_truth(self) -> bool {
        self == SchedulerKind::GroundTruth
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = SchedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        Self::ALL
            .into_iter()
            .find(|k| k.name().replace('-', "") == norm)
            .ok_or_else(|| SchedError::UnknownKind(s.to_string()))
    }
}

/// Global knowledge available only to the ground-truth policy.
#[derive(Clone, Copy)]
pub struct Oracle<'a> {
    pub ground_truth: &'a GroundTruthRatings,
    /// Actual current holders of every item.
    pub holdings: &'a BTreeMap<ItemId, BTreeSet<NodeId>>,
}

/// Run-wide inputs shared by every key computation.
#[derive(Clone, Copy)]
pub struct KeyContext<'a> {
    pub now: f64,
    pub items: &'a BTreeMap<ItemId, Item>,
    /// Total number of users (n).
    pub n_users: usize,
    pub user_node: &'a BTreeMap<UserId, NodeId>,
    pub top_k: usize,
    pub bootstrap_fraction: f64,
    /// Centrally synchronized matrix; set only for the 3G variant.
    pub global: Option<&'a RatingMatrix>,
    pub oracle: Option<Oracle<'a>>,
}

/// Key computation for one sender, with its prediction state prepared once.
pub struct Keyer<'a> {
    kind: SchedulerKind,
    node: &'a NodeState,
    peer_user: Option<UserId>,
    matrix: &'a RatingMatrix,
    predictions: Option<Arc<PredictionSummary>>,
    ctx: KeyContext<'a>,
}

impl<'a> Keyer<'a> {
    /// `peer` is the receiving node, or `None` for peer-independent keys
    /// (buffer eviction).
    pub fn new(
        kind: SchedulerKind,
        node: &'a NodeState,
        peer: Option<&'a NodeState>,
        ctx: KeyContext<'a>,
    ) -> Result<Self, SchedError> {
        let matrix = if kind.uses_global_matrix() {
            ctx.global
                .ok_or(SchedError::MissingInput(kind, "the global rating matrix"))?
        } else {
            &node.matrix
        };
        if kind.uses_ground_truth() && ctx.oracle.is_none() {
            return Err(SchedError::MissingInput(kind, "ground truth"));
        }
        let ctx = KeyContext {
            oracle: if kind.uses_ground_truth() {
                ctx.oracle
            } else {
                None
            },
            ..ctx
        };
        let peer_user = peer.and_then(NodeState::user);
        let needs_predictions = match kind {
            SchedulerKind::CoFiGel | SchedulerKind::CoFiGel3G | SchedulerKind::NoDeliveryTime => {
                true
            }
            SchedulerKind::NoCoverage => peer_user.is_none(),
            SchedulerKind::NoItemRecall | SchedulerKind::GroundTruth => false,
        };
        let predictions = needs_predictions.then(|| matrix.predictions(ctx.top_k));
        Ok(Keyer {
            kind,
            node,
            peer_user,
            matrix,
            predictions,
            ctx,
        })
    }

    fn g_plus_r_plus(&self, item: ItemId) -> (usize, usize) {
        let n = self.ctx.n_users;
        let observed = self.matrix.positive_count(item);
        let r_plus = utility::effective_r_plus(observed, n, self.ctx.bootstrap_fraction);
        let g_plus = self
            .predictions
            .as_ref()
            .map_or(0, |p| p.positive_count(item))
            .min(n.saturating_sub(r_plus));
        (g_plus, r_plus)
    }

    /// Locally known statistics for `item`.
    pub fn item_stats(&self, item: ItemId) -> ItemStats {
        let (g_plus, r_plus) = self.g_plus_r_plus(item);
        let mut holders: BTreeSet<NodeId> = self.node.sigma.holders(item).collect();
        holders.insert(self.node.id);
        let mut targets = BTreeSet::new();
        if let Some(p) = &self.predictions {
            for user in p.positive_users(item).chain(self.matrix.likers(item)) {
                let held = self
                    .ctx
                    .user_node
                    .get(&user)
                    .is_some_and(|n| holders.contains(n));
                if !held {
                    targets.insert(user);
                }
            }
        }
        ItemStats {
            item,
            n: self.ctx.n_users,
            g_plus,
            r_plus,
            holders,
            targets,
        }
    }

    fn cofigel_utility(&self, item: ItemId) -> Result<f64, SchedError> {
        let stats = self.item_stats(item);
        let cs = self.node.contacts.estimate(self.ctx.now);
        let t_remaining = self
            .ctx
            .items
            .get(&item)
            .map_or(0.0, |it| it.expiry_time - self.ctx.now);
        Ok(utility::utility(
            &stats,
            &self.node.sigma,
            &cs,
            t_remaining,
        )?)
    }

    fn coverage_gain_or_zero(&self, user: UserId, item: ItemId) -> usize {
        self.matrix.coverage_gain(user, item).unwrap_or(0)
    }

    pub fn key(&self, item: ItemId) -> Result<f64, SchedError> {
        Ok(match self.kind {
            SchedulerKind::CoFiGel | SchedulerKind::CoFiGel3G => self.cofigel_utility(item)?,
            SchedulerKind::NoDeliveryTime => {
                let stats = self.item_stats(item);
                (stats.g_plus + stats.r_plus) as f64 * utility::rating_gain_bound(&stats)
            }
            SchedulerKind::NoCoverage => match self.peer_user {
                Some(user) => self.matrix.rank(user, item).ok().flatten().unwrap_or(0.0),
                None => {
                    let (g, r) = self.g_plus_r_plus(item);
                    (g + r) as f64
                }
            },
            SchedulerKind::NoItemRecall => match self.peer_user {
                Some(user) => self.coverage_gain_or_zero(user, item) as f64,
                None => self
                    .matrix
                    .users()
                    .iter()
                    .map(|&v| self.coverage_gain_or_zero(v, item))
                    .max()
                    .unwrap_or(0) as f64,
            },
            SchedulerKind::GroundTruth => {
                let oracle = self
                    .ctx
                    .oracle
                    .ok_or(SchedError::MissingInput(self.kind, "ground truth"))?;
                let holders = oracle.holdings.get(&item);
                oracle
                    .ground_truth
                    .likers(item)
                    .filter(|u| {
                        let node = self.ctx.user_node.get(u);
                        node.is_some_and(|n| !holders.is_some_and(|h| h.contains(n)))
                    })
                    .count() as f64
            }
        })
    }
}

/// Sort `(item, key)` pairs by descending key, then ascending item id.
pub fn sort_by_key(keyed: &mut [(ItemId, f64)]) {
    keyed.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// The sender's forwardable items the peer lacks, highest key first.
pub fn order_queue(
    node: &NodeState,
    peer: &NodeState,
    kind: SchedulerKind,
    ctx: KeyContext<'_>,
) -> Result<Vec<ItemId>, SchedError> {
    let keyer = Keyer::new(kind, node, Some(peer), ctx)?;
    let mut keyed = Vec::new();
    for item in node.forwardable(ctx.items, ctx.now) {
        if peer.holds(item) {
            continue;
        }
        keyed.push((item, keyer.key(item)?));
    }
    sort_by_key(&mut keyed);
    Ok(keyed.into_iter().map(|(item, _)| item).collect())
}

/// Makes every rating known to any of `nodes` visible in `global`.
/// Only ratings move; item bytes, σ and contact statistics stay local.
pub fn global_matrix_sync<'n>(
    nodes: impl IntoIterator<Item = &'n NodeState>,
    global: &mut RatingMatrix,
) -> bool {
    let mut changed = false;
    for node in nodes {
        changed |= global.merge_from(&node.matrix);
    }
    changed
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for kind in SchedulerKind::ALL {
            assert_eq!(kind.name().parse::<SchedulerKind>().unwrap(), kind);
        }
        assert_eq!(
            "CoFiGel3G".parse::<SchedulerKind>().unwrap(),
            SchedulerKind::CoFiGel3G
        );
        assert_eq!(
            "NoItemRecall".parse::<SchedulerKind>().unwrap(),
            SchedulerKind::NoItemRecall
        );
        assert!(matches!(
            "epidemic".parse::<SchedulerKind>(),
            Err(SchedError::UnknownKind(_))
        ));
    }
}
