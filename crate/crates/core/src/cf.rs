//! Item-based memory collaborative filtering over binary ratings.
//!
//! Similarity between two items is the cosine of their rating columns, where
//! unrated and negative cells both count as zero. Only positive ratings
//! therefore contribute, which lets the matrix keep integer co-like counts
//! and derive every similarity exactly from them.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use thiserror::Error;

use crate::ids::{ItemId, UserId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CfError {
    #[error("unknown item {0}")]
    UnknownItem(ItemId),
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("({0}, {1}) is already rated")]
    AlreadyRated(UserId, ItemId),
}

/// A confirmed rating. Ratings are facts: once made they never change.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rating {
    pub positive: bool,
    /// Simulation seconds at which the rating was made.
    pub at: f64,
}

impl Rating {
    /// Merge order: the earlier rating is the origin of the fact. Equal
    /// timestamps fall back to the negative value so the choice is total.
    fn precedes(&self, other: &Rating) -> bool {
        match self.at.total_cmp(&other.at) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => !self.positive && other.positive,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Rated,
    Predicted,
    Unpredictable,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RatingEntry {
    Rated(Rating),
    Predicted { rank: f64 },
    Unpredictable,
}

impl RatingEntry {
    pub fn status(&self) -> Status {
        match self {
            RatingEntry::Rated(_) => Status::Rated,
            RatingEntry::Predicted { .. } => Status::Predicted,
            RatingEntry::Unpredictable => Status::Unpredictable,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionResult {
    pub user: UserId,
    pub item: ItemId,
    pub rank: f64,
    pub label: Label,
}

/// Top-k classification of every user in a matrix, computed once per
/// matrix revision.
#[derive(Debug, Clone, Default)]
pub struct PredictionSummary {
    k: usize,
    revision: u64,
    by_user: BTreeMap<UserId, Vec<PredictionResult>>,
    positive_users: BTreeMap<ItemId, BTreeSet<UserId>>,
}

impl PredictionSummary {
    /// Matrix revision these predictions were computed from.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Predictions for `user`, highest rank first.
    pub fn for_user(&self, user: UserId) -> &[PredictionResult] {
        self.by_user.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Number of users for which `item` is currently predicted positive (g⁺).
    pub fn positive_count(&self, item: ItemId) -> usize {
        self.positive_users.get(&item).map_or(0, BTreeSet::len)
    }

    pub fn positive_users(&self, item: ItemId) -> impl Iterator<Item = UserId> + '_ {
        self.positive_users
            .get(&item)
            .into_iter()
            .flatten()
            .copied()
    }

    pub fn is_positive(&self, user: UserId, item: ItemId) -> bool {
        self.positive_users
            .get(&item)
            .is_some_and(|users| users.contains(&user))
    }

    pub fn is_predicted(&self, user: UserId, item: ItemId) -> bool {
        self.for_user(user).iter().any(|p| p.item == item)
    }

    pub fn predicted_pairs(&self) -> impl Iterator<Item = &PredictionResult> {
        self.by_user.values().flatten()
    }
}

/// Cosine of two binary columns given their overlap and positive counts.
/// A column with no positive entry has similarity 0 with everything.
/// Ranks compared at a resolution of 1e-9 so that mathematically equal sums
/// reached through different rounding still tie.
fn rank_key(rank: f64) -> i64 {
    (rank * 1e9).round() as i64
}

fn cosine(overlap: u32, n_i: usize, n_j: usize) -> f64 {
    if overlap == 0 || n_i == 0 || n_j == 0 {
        return 0.0;
    }
    overlap as f64 / ((n_i as f64).sqrt() * (n_j as f64).sqrt())
}

/// One device's view of the user x item rating matrix.
#[derive(Debug, Clone, Default)]
pub struct RatingMatrix {
    users: BTreeSet<UserId>,
    items: BTreeSet<ItemId>,
    rated: BTreeMap<(UserId, ItemId), Rating>,
    likes: BTreeMap<UserId, BTreeSet<ItemId>>,
    liked_by: BTreeMap<ItemId, BTreeSet<UserId>>,
    // Off-diagonal co-like counts; both (i, j) and (j, i) are stored.
    co_likes: HashMap<ItemId, HashMap<ItemId, u32>>,
    revision: u64,
    cache: RefCell<Option<Arc<PredictionSummary>>>,
}

impl RatingMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_universe(
        users: impl IntoIterator<Item = UserId>,
        items: impl IntoIterator<Item = ItemId>,
    ) -> Self {
        RatingMatrix {
            users: users.into_iter().collect(),
            items: items.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn users(&self) -> &BTreeSet<UserId> {
        &self.users
    }

    pub fn items(&self) -> &BTreeSet<ItemId> {
        &self.items
    }

    pub fn add_user(&mut self, user: UserId) {
        if self.users.insert(user) {
            self.touch();
        }
    }

    pub fn add_item(&mut self, item: ItemId) {
        if self.items.insert(item) {
            self.touch();
        }
    }

    /// Increments on every observable change.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn rated_count(&self) -> usize {
        self.rated.len()
    }

    pub fn rated_entries(&self) -> impl Iterator<Item = (UserId, ItemId, Rating)> + '_ {
        self.rated.iter().map(|(&(u, i), &r)| (u, i, r))
    }

    pub fn rating(&self, user: UserId, item: ItemId) -> Option<Rating> {
        self.rated.get(&(user, item)).copied()
    }

    pub fn is_rated(&self, user: UserId, item: ItemId) -> bool {
        self.rated.contains_key(&(user, item))
    }

    /// Items `user` rated positively (I_u⁺).
    pub fn liked_items(&self, user: UserId) -> impl Iterator<Item = ItemId> + '_ {
        self.likes.get(&user).into_iter().flatten().copied()
    }

    /// Users who rated `item` positively.
    pub fn likers(&self, item: ItemId) -> impl Iterator<Item = UserId> + '_ {
        self.liked_by.get(&item).into_iter().flatten().copied()
    }

    pub fn positive_count(&self, item: ItemId) -> usize {
        self.liked_by.get(&item).map_or(0, BTreeSet::len)
    }

    fn overlap(&self, i: ItemId, j: ItemId) -> u32 {
        if i == j {
            return self.positive_count(i) as u32;
        }
        self.co_likes
            .get(&i)
            .and_then(|row| row.get(&j))
            .copied()
            .unwrap_or(0)
    }

    fn sim_unchecked(&self, i: ItemId, j: ItemId) -> f64 {
        cosine(
            self.overlap(i, j),
            self.positive_count(i),
            self.positive_count(j),
        )
    }

    pub fn similarity(&self, i: ItemId, j: ItemId) -> Result<f64, CfError> {
        for item in [i, j] {
            if !self.items.contains(&item) {
                return Err(CfError::UnknownItem(item));
            }
        }
        Ok(self.sim_unchecked(i, j))
    }

    fn check_pair(&self, user: UserId, item: ItemId) -> Result<(), CfError> {
        if !self.users.contains(&user) {
            return Err(CfError::UnknownUser(user));
        }
        if !self.items.contains(&item) {
            return Err(CfError::UnknownItem(item));
        }
        if self.is_rated(user, item) {
            return Err(CfError::AlreadyRated(user, item));
        }
        Ok(())
    }

    /// Sum of similarities between `item` and the user's liked items.
    /// `None` when the pair is unpredictable (the sum is zero).
    pub fn rank(&self, user: UserId, item: ItemId) -> Result<Option<f64>, CfError> {
        self.check_pair(user, item)?;
        Ok(self.rank_unchecked(user, item))
    }

    fn rank_unchecked(&self, user: UserId, item: ItemId) -> Option<f64> {
        let mut sum = 0.0;
        for j in self.liked_items(user) {
            sum += self.sim_unchecked(item, j);
        }
        (sum > 0.0).then_some(sum)
    }

    pub fn entry(&self, user: UserId, item: ItemId) -> Result<RatingEntry, CfError> {
        if let Some(r) = self.rating(user, item) {
            return Ok(RatingEntry::Rated(r));
        }
        Ok(match self.rank(user, item)? {
            Some(rank) => RatingEntry::Predicted { rank },
            None => RatingEntry::Unpredictable,
        })
    }

    pub fn status(&self, user: UserId, item: ItemId) -> Result<Status, CfError> {
        self.entry(user, item).map(|e| e.status())
    }

    /// Ranks of all unrated predictable items for `user`. Accumulates over
    /// the user's liked items in ascending order, the same summation order as
    /// [`RatingMatrix::rank`], so both paths agree bit for bit.
    fn ranks_for(&self, user: UserId) -> BTreeMap<ItemId, f64> {
        let mut ranks: BTreeMap<ItemId, f64> = BTreeMap::new();
        for j in self.liked_items(user) {
            let n_j = self.positive_count(j);
            let Some(row) = self.co_likes.get(&j) else {
                continue;
            };
            for (&i, &overlap) in row {
                if overlap == 0 || self.is_rated(user, i) || !self.items.contains(&i) {
                    continue;
                }
                *ranks.entry(i).or_insert(0.0) += cosine(overlap, self.positive_count(i), n_j);
            }
        }
        ranks
    }

    /// Every unrated predictable item for `user`, labelled positive for the
    /// `k` highest ranks. Sorted by descending rank, then ascending item id.
    pub fn predict_user(&self, user: UserId, k: usize) -> Vec<PredictionResult> {
        let mut ranked: Vec<(ItemId, f64)> = self.ranks_for(user).into_iter().collect();
        ranked.sort_by(|a, b| rank_key(b.1).cmp(&rank_key(a.1)).then(a.0.cmp(&b.0)));
        ranked
            .into_iter()
            .enumerate()
            .map(|(pos, (item, rank))| PredictionResult {
                user,
                item,
                rank,
                label: if pos < k {
                    Label::Positive
                } else {
                    Label::Negative
                },
            })
            .collect()
    }

    /// Cached top-k classification for every user in the matrix.
    pub fn predictions(&self, k: usize) -> Arc<PredictionSummary> {
        if let Some(cached) = self.cache.borrow().as_ref() {
            if cached.k == k && cached.revision == self.revision {
                return Arc::clone(cached);
            }
        }
        let mut summary = PredictionSummary {
            k,
            revision: self.revision,
            ..PredictionSummary::default()
        };
        for &user in &self.users {
            let preds = self.predict_user(user, k);
            for p in preds.iter().filter(|p| p.label == Label::Positive) {
                summary
                    .positive_users
                    .entry(p.item)
                    .or_default()
                    .insert(user);
            }
            summary.by_user.insert(user, preds);
        }
        let summary = Arc::new(summary);
        *self.cache.borrow_mut() = Some(Arc::clone(&summary));
        summary
    }

    /// Number of pairs that would be rated or predictable for `item` if
    /// `user` rated it positively: the rating itself plus every other user
    /// whose pair turns from unpredictable to predictable.
    pub fn coverage_gain(&self, user: UserId, item: ItemId) -> Result<usize, CfError> {
        self.check_pair(user, item)?;
        let user_likes = self.likes.get(&user);
        let mut gain = 1;
        for &v in &self.users {
            if v == user || self.is_rated(v, item) || self.rank_unchecked(v, item).is_some() {
                continue;
            }
            // After the hypothetical rating, v can reach `item` through any
            // item both v and `user` like.
            let shares_like = match (self.likes.get(&v), user_likes) {
                (Some(a), Some(b)) => a.intersection(b).next().is_some(),
                _ => false,
            };
            if shares_like {
                gain += 1;
            }
        }
        Ok(gain)
    }

    pub fn apply_rating(
        &mut self,
        user: UserId,
        item: ItemId,
        positive: bool,
        now: f64,
    ) -> Result<(), CfError> {
        if self.is_rated(user, item) {
            return Err(CfError::AlreadyRated(user, item));
        }
        self.users.insert(user);
        self.items.insert(item);
        self.insert_rating(user, item, Rating { positive, at: now });
        Ok(())
    }

    fn insert_rating(&mut self, user: UserId, item: ItemId, rating: Rating) {
        if rating.positive {
            let liked = self.likes.entry(user).or_default();
            for &j in liked.iter() {
                *self.co_likes.entry(item).or_default().entry(j).or_insert(0) += 1;
                *self.co_likes.entry(j).or_default().entry(item).or_insert(0) += 1;
            }
            liked.insert(item);
            self.liked_by.entry(item).or_default().insert(user);
        }
        self.rated.insert((user, item), rating);
        self.touch();
    }

    fn remove_rating(&mut self, user: UserId, item: ItemId) {
        let Some(old) = self.rated.remove(&(user, item)) else {
            return;
        };
        if old.positive {
            if let Some(liked) = self.likes.get_mut(&user) {
                liked.remove(&item);
                for &j in liked.iter() {
                    for (a, b) in [(item, j), (j, item)] {
                        if let Some(row) = self.co_likes.get_mut(&a) {
                            if let Some(c) = row.get_mut(&b) {
                                *c -= 1;
                                if *c == 0 {
                                    row.remove(&b);
                                }
                            }
                        }
                    }
                }
            }
            if let Some(users) = self.liked_by.get_mut(&item) {
                users.remove(&user);
            }
        }
        self.touch();
    }

    fn touch(&mut self) {
        self.revision += 1;
    }

    /// In-place merge of `other`'s knowledge. Returns true if anything changed.
    pub fn merge_from(&mut self, other: &RatingMatrix) -> bool {
        let before = self.revision;
        for &u in &other.users {
            self.add_user(u);
        }
        for &i in &other.items {
            self.add_item(i);
        }
        for (&(u, i), theirs) in &other.rated {
            match self.rated.get(&(u, i)).copied() {
                None => self.insert_rating(u, i, *theirs),
                Some(ours) if theirs.precedes(&ours) => {
                    if ours.positive == theirs.positive {
                        self.rated.insert((u, i), *theirs);
                        self.touch();
                    } else {
                        self.remove_rating(u, i);
                        self.insert_rating(u, i, *theirs);
                    }
                }
                Some(_) => {}
            }
        }
        self.revision != before
    }

    /// Union of two matrices' rated knowledge.
    pub fn merge(local: &RatingMatrix, remote: &RatingMatrix) -> RatingMatrix {
        let mut merged = local.clone();
        merged.merge_from(remote);
        merged
    }

    /// Entry-wise equality of universes and rated entries.
    pub fn same_knowledge(&self, other: &RatingMatrix) -> bool {
        self.users == other.users && self.items == other.items && self.rated == other.rated
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn u(n: u32) -> UserId {
        UserId(n)
    }
    pub(crate) fn i(n: u32) -> ItemId {
        ItemId(n)
    }

    /// The 7 x 6 worked-example matrix. `1`/`0` are ratings, `.` unrated.
    pub(crate) fn worked_matrix() -> RatingMatrix {
        let rows = [
            "1.....", "1.....", "11...1", ".1.111", "..11..", "1...11", "10..01",
        ];
        let mut m = RatingMatrix::with_universe((1..=7).map(u), (1..=6).map(i));
        for (ui, row) in rows.iter().enumerate() {
            for (ii, c) in row.chars().enumerate() {
                let (user, item) = (u(ui as u32 + 1), i(ii as u32 + 1));
                match c {
                    '1' => m.apply_rating(user, item, true, 0.0).unwrap(),
                    '0' => m.apply_rating(user, item, false, 0.0).unwrap(),
                    _ => {}
                }
            }
        }
        m
    }

    #[test]
    fn worked_example_similarities() {
        let m = worked_matrix();
        let s12 = m.similarity(i(1), i(2)).unwrap();
        let s16 = m.similarity(i(1), i(6)).unwrap();
        assert!((s12 - 1.0 / (5f64.sqrt() * 2f64.sqrt())).abs() < 1e-12);
        assert!((s16 - 3.0 / (5f64.sqrt() * 4f64.sqrt())).abs() < 1e-12);
        assert_eq!(m.similarity(i(1), i(4)).unwrap(), 0.0);
        assert_eq!(m.similarity(i(3), i(3)).unwrap(), 1.0);
        assert_eq!(s12, m.similarity(i(2), i(1)).unwrap());
    }

    #[test]
    fn unknown_item_is_rejected() {
        let m = worked_matrix();
        assert_eq!(m.similarity(i(1), i(9)), Err(CfError::UnknownItem(i(9))));
    }

    #[test]
    fn item_without_likers_has_zero_similarity() {
        let mut m = RatingMatrix::with_universe([u(1)], [i(1), i(2)]);
        m.apply_rating(u(1), i(1), false, 0.0).unwrap();
        assert_eq!(m.similarity(i(1), i(1)).unwrap(), 0.0);
        assert_eq!(m.similarity(i(1), i(2)).unwrap(), 0.0);
    }

    #[test]
    fn worked_example_ranks() {
        let m = worked_matrix();
        let r41 = m.rank(u(4), i(1)).unwrap().unwrap();
        let r43 = m.rank(u(4), i(3)).unwrap().unwrap();
        assert!((r41 - 1.3032).abs() < 5e-3, "{r41}");
        assert!(
            (r43 - std::f64::consts::FRAC_1_SQRT_2).abs() < 5e-3,
            "{r43}"
        );
        assert_eq!(m.rank(u(5), i(1)).unwrap(), None);
        assert_eq!(m.rank(u(4), i(2)), Err(CfError::AlreadyRated(u(4), i(2))));
    }

    #[test]
    fn worked_example_statuses_match_table() {
        // `*` marks unpredictable cells.
        let rows = [
            "1?**??", "1?**??", "11*??1", "?1?111", "*?11??", "1?*?11", "10*?01",
        ];
        let m = worked_matrix();
        for (ui, row) in rows.iter().enumerate() {
            for (ii, c) in row.chars().enumerate() {
                let expected = match c {
                    '?' => Status::Predicted,
                    '*' => Status::Unpredictable,
                    _ => Status::Rated,
                };
                let got = m.status(u(ui as u32 + 1), i(ii as u32 + 1)).unwrap();
                assert_eq!(got, expected, "cell u{} i{}", ui + 1, ii + 1);
            }
        }
    }

    #[test]
    fn predict_user_top_k() {
        let m = worked_matrix();
        let p = m.predict_user(u(4), 1);
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].item, p[0].label), (i(1), Label::Positive));
        assert_eq!((p[1].item, p[1].label), (i(3), Label::Negative));
        let p = m.predict_user(u(4), 2);
        assert!(p.iter().all(|r| r.label == Label::Positive));

        let empty = RatingMatrix::with_universe([u(1)], [i(1)]);
        assert!(empty.predict_user(u(1), 10).is_empty());
    }

    #[test]
    fn ties_break_by_item_id() {
        // u1 likes i1; u2 likes i1, i2, i3. i2 and i3 tie for u1.
        let mut m = RatingMatrix::with_universe([u(1), u(2)], [i(3), i(2), i(1)]);
        m.apply_rating(u(1), i(1), true, 0.0).unwrap();
        for item in [i(1), i(2), i(3)] {
            m.apply_rating(u(2), item, true, 0.0).unwrap();
        }
        let p = m.predict_user(u(1), 1);
        assert_eq!(p[0].item, i(2));
        assert_eq!(p[0].rank, p[1].rank);
        assert_eq!(p[0].label, Label::Positive);
        assert_eq!(p[1].label, Label::Negative);
    }

    #[test]
    fn worked_example_coverage_gain() {
        let m = worked_matrix();
        assert_eq!(m.coverage_gain(u(4), i(1)).unwrap(), 2);
        assert_eq!(m.coverage_gain(u(4), i(3)).unwrap(), 4);
        assert!(m.coverage_gain(u(1), i(1)).is_err());
    }

    #[test]
    fn coverage_gain_when_everyone_else_rated() {
        let mut m = RatingMatrix::with_universe([u(1), u(2), u(3)], [i(1), i(2)]);
        m.apply_rating(u(2), i(1), true, 0.0).unwrap();
        m.apply_rating(u(3), i(1), false, 0.0).unwrap();
        m.apply_rating(u(1), i(2), true, 0.0).unwrap();
        assert_eq!(m.coverage_gain(u(1), i(1)).unwrap(), 1);
    }

    #[test]
    fn rating_unlocks_predictions() {
        let mut m = worked_matrix();
        for v in [3, 6, 7] {
            assert_eq!(m.status(u(v), i(3)).unwrap(), Status::Unpredictable);
        }
        m.apply_rating(u(4), i(3), true, 10.0).unwrap();
        for v in [3, 6, 7] {
            assert_eq!(m.status(u(v), i(3)).unwrap(), Status::Predicted);
        }
        assert_eq!(m.rank(u(4), i(3)), Err(CfError::AlreadyRated(u(4), i(3))));
        assert_eq!(
            m.apply_rating(u(4), i(3), false, 11.0),
            Err(CfError::AlreadyRated(u(4), i(3)))
        );
        assert!(!m.predict_user(u(4), 10).iter().any(|p| p.item == i(3)));
    }

    #[test]
    fn negative_rating_leaves_similarities_unchanged() {
        let mut m = worked_matrix();
        let before: Vec<f64> = (1..=6)
            .flat_map(|a| (1..=6).map(move |b| (a, b)))
            .map(|(a, b)| m.similarity(i(a), i(b)).unwrap())
            .collect();
        m.apply_rating(u(1), i(4), false, 3.0).unwrap();
        let after: Vec<f64> = (1..=6)
            .flat_map(|a| (1..=6).map(move |b| (a, b)))
            .map(|(a, b)| m.similarity(i(a), i(b)).unwrap())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn merge_prefers_earlier_rating() {
        let mut a = RatingMatrix::new();
        let mut b = RatingMatrix::new();
        a.apply_rating(u(1), i(1), true, 5.0).unwrap();
        a.apply_rating(u(1), i(2), true, 1.0).unwrap();
        b.apply_rating(u(1), i(1), false, 3.0).unwrap();
        b.apply_rating(u(2), i(2), true, 1.0).unwrap();
        let ab = RatingMatrix::merge(&a, &b);
        let ba = RatingMatrix::merge(&b, &a);
        assert!(ab.same_knowledge(&ba));
        assert_eq!(
            ab.rating(u(1), i(1)),
            Some(Rating {
                positive: false,
                at: 3.0
            })
        );
        // The retracted like must no longer feed co-like counts.
        assert_eq!(ab.similarity(i(1), i(2)).unwrap(), 0.0);
        assert_eq!(ab.positive_count(i(2)), 2);
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let a = worked_matrix();
        let merged = RatingMatrix::merge(&a, &RatingMatrix::new());
        assert!(merged.same_knowledge(&a));
        let mut again = merged.clone();
        assert!(!again.merge_from(&a));
    }

    #[test]
    fn prediction_cache_tracks_revisions() {
        let mut m = worked_matrix();
        let first = m.predictions(1);
        assert!(first.is_positive(u(4), i(1)));
        assert_eq!(first.positive_count(i(1)), 1);
        m.apply_rating(u(4), i(1), true, 1.0).unwrap();
        let second = m.predictions(1);
        assert!(!second.is_predicted(u(4), i(1)));
        assert!(second.is_positive(u(4), i(3)));
    }
}
