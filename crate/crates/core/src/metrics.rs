//! Evaluation over a run: prediction coverage, fraction of correctly
//! predicted positives (FCPP), precision of delivered recommendations and
//! per-user recall measures.
//!
//! Report CSV columns:
//!
//! | column | meaning |
//! |---|---|
//! | `kind` | `snapshot` or `summary` |
//! | `t` | seconds since start (run duration on the summary row) |
//! | `positive_ratings_discovered` | positive ratings revealed for measured items |
//! | `coverage` | rated-or-predictable share of (subscribed user, measured item) pairs |
//! | `fcpp` | correctly predicted or confirmed positives over all true positives |
//! | `precision` | liked share of deliveries that were recommended (summary only) |
//! | `recommended_deliveries` | deliveries predicted positive on arrival (summary only) |
//! | `avg_positive_items_per_user` | liked deliveries per subscribed user (summary only) |
//! | `users_with_useful_item` | users with at least one liked delivery (summary only) |
//! | `latency_p50`, `latency_p90` | delivery latency percentiles in seconds (summary only) |

use std::collections::BTreeSet;
use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cf::RatingMatrix;
use crate::ids::{ItemId, UserId};
use crate::sim::{DeliveryRecord, SimResult};
use crate::trace_io::GroundTruthRatings;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

/// Items count toward measurements when published in `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementWindow {
    pub start: f64,
    pub end: f64,
}

impl MeasurementWindow {
    pub fn contains(&self, publish_time: f64) -> bool {
        publish_time >= self.start && publish_time < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub positive_ratings_discovered: u64,
    pub coverage: f64,
    pub fcpp: f64,
}

/// Share of `users x items` pairs that are rated or predictable in `matrix`.
pub fn coverage(
    matrix: &RatingMatrix,
    users: &BTreeSet<UserId>,
    items: &BTreeSet<ItemId>,
    top_k: usize,
) -> f64 {
    if users.is_empty() || items.is_empty() {
        return 0.0;
    }
    let preds = matrix.predictions(top_k);
    let mut covered = 0usize;
    for &u in users {
        covered += items
            .iter()
            .filter(|&&i| matrix.is_rated(u, i) || preds.is_predicted(u, i))
            .count();
    }
    covered as f64 / (users.len() * items.len()) as f64
}

/// Positive ratings confirmed in `matrix` for `users x items`.
pub fn positive_ratings_discovered(
    matrix: &RatingMatrix,
    users: &BTreeSet<UserId>,
    items: &BTreeSet<ItemId>,
) -> u64 {
    items
        .iter()
        .map(|&i| matrix.likers(i).filter(|u| users.contains(u)).count() as u64)
        .sum()
}

/// True positives over `users x items` that are either confirmed or
/// currently predicted positive, each pair counted once, divided by all true
/// positives in that range.
pub fn fcpp(
    matrix: &RatingMatrix,
    users: &BTreeSet<UserId>,
    items: &BTreeSet<ItemId>,
    gt: &GroundTruthRatings,
    top_k: usize,
) -> f64 {
    let preds = matrix.predictions(top_k);
    let mut total = 0usize;
    let mut hit = 0usize;
    for &i in items {
        for u in gt.likers(i).filter(|u| users.contains(u)) {
            total += 1;
            let confirmed = matrix.rating(u, i).is_some_and(|r| r.positive);
            if confirmed || preds.is_positive(u, i) {
                hit += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

pub fn snapshot(
    t: f64,
    matrix: &RatingMatrix,
    users: &BTreeSet<UserId>,
    items: &BTreeSet<ItemId>,
    gt: &GroundTruthRatings,
    top_k: usize,
) -> Snapshot {
    Snapshot {
        t,
        positive_ratings_discovered: positive_ratings_discovered(matrix, users, items),
        coverage: coverage(matrix, users, items, top_k),
        fcpp: fcpp(matrix, users, items, gt, top_k),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precision {
    pub recommended: usize,
    pub liked: usize,
}

impl Precision {
    pub fn ratio(&self) -> f64 {
        if self.recommended == 0 {
            0.0
        } else {
            self.liked as f64 / self.recommended as f64
        }
    }
}

fn measured<'a>(
    deliveries: &'a [DeliveryRecord],
    items: &'a BTreeSet<ItemId>,
) -> impl Iterator<Item = &'a DeliveryRecord> + 'a {
    deliveries.iter().filter(move |d| items.contains(&d.item))
}

/// Among measured deliveries recommended on arrival, how many were liked.
pub fn precision(
    deliveries: &[DeliveryRecord],
    items: &BTreeSet<ItemId>,
    gt: &GroundTruthRatings,
) -> Precision {
    let mut p = Precision {
        recommended: 0,
        liked: 0,
    };
    for d in measured(deliveries, items).filter(|d| d.predicted_positive) {
        p.recommended += 1;
        if gt.likes(d.user, d.item) {
            p.liked += 1;
        }
    }
    p
}

/// (liked deliveries per user, users with at least one liked delivery).
pub fn recall_measures(
    deliveries: &[DeliveryRecord],
    items: &BTreeSet<ItemId>,
    users: &BTreeSet<UserId>,
    gt: &GroundTruthRatings,
) -> (f64, usize) {
    let mut liked = 0usize;
    let mut satisfied = BTreeSet::new();
    for d in measured(deliveries, items) {
        if users.contains(&d.user) && gt.likes(d.user, d.item) {
            liked += 1;
            satisfied.insert(d.user);
        }
    }
    if users.is_empty() {
        return (0.0, 0);
    }
    (liked as f64 / users.len() as f64, satisfied.len())
}

/// Nearest-rank percentile; 0 for an empty sample.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub duration: f64,
    pub snapshots: Vec<Snapshot>,
    pub precision: f64,
    pub recommended_deliveries: usize,
    pub avg_positive_items_per_user: f64,
    pub users_with_useful_item: usize,
    pub latency_p50: f64,
    pub latency_p90: f64,
}

impl MetricsReport {
    pub fn final_snapshot(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    pub fn final_fcpp(&self) -> f64 {
        self.final_snapshot().map_or(0.0, |s| s.fcpp)
    }

    pub fn final_coverage(&self) -> f64 {
        self.final_snapshot().map_or(0.0, |s| s.coverage)
    }

    pub fn final_positive_ratings(&self) -> u64 {
        self.final_snapshot()
            .map_or(0, |s| s.positive_ratings_discovered)
    }
}

pub fn report(result: &SimResult, gt: &GroundTruthRatings) -> MetricsReport {
    let items = result.measured_items();
    let deliveries = &result.log.deliveries;
    let p = precision(deliveries, &items, gt);
    let (avg, satisfied) = recall_measures(deliveries, &items, &result.users, gt);
    let mut latencies: Vec<f64> = measured(deliveries, &items).map(|d| d.latency).collect();
    latencies.sort_by(f64::total_cmp);
    MetricsReport {
        duration: result.duration,
        snapshots: result.snapshots.clone(),
        precision: p.ratio(),
        recommended_deliveries: p.recommended,
        avg_positive_items_per_user: avg,
        users_with_useful_item: satisfied,
        latency_p50: percentile(&latencies, 50.0),
        latency_p90: percentile(&latencies, 90.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Row {
    kind: String,
    t: f64,
    positive_ratings_discovered: u64,
    coverage: f64,
    fcpp: f64,
    precision: Option<f64>,
    recommended_deliveries: Option<usize>,
    avg_positive_items_per_user: Option<f64>,
    users_with_useful_item: Option<usize>,
    latency_p50: Option<f64>,
    latency_p90: Option<f64>,
}

impl Row {
    fn snapshot(s: &Snapshot) -> Row {
        Row {
            kind: "snapshot".into(),
            t: s.t,
            positive_ratings_discovered: s.positive_ratings_discovered,
            coverage: s.coverage,
            fcpp: s.fcpp,
            precision: None,
            recommended_deliveries: None,
            avg_positive_items_per_user: None,
            users_with_useful_item: None,
            latency_p50: None,
            latency_p90: None,
        }
    }

    fn summary(r: &MetricsReport) -> Row {
        let last = r.final_snapshot().copied().unwrap_or(Snapshot {
            t: r.duration,
            positive_ratings_discovered: 0,
            coverage: 0.0,
            fcpp: 0.0,
        });
        Row {
            kind: "summary".into(),
            t: r.duration,
            positive_ratings_discovered: last.positive_ratings_discovered,
            coverage: last.coverage,
            fcpp: last.fcpp,
            precision: Some(r.precision),
            recommended_deliveries: Some(r.recommended_deliveries),
            avg_positive_items_per_user: Some(r.avg_positive_items_per_user),
            users_with_useful_item: Some(r.users_with_useful_item),
            latency_p50: Some(r.latency_p50),
            latency_p90: Some(r.latency_p90),
        }
    }
}

pub fn write_report<W: io::Write>(report: &MetricsReport, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for s in &report.snapshots {
        w.serialize(Row::snapshot(s))?;
    }
    w.serialize(Row::summary(report))?;
    w.flush()?;
    Ok(())
}

pub fn emit_report(report: &MetricsReport, path: &Path) -> Result<(), ReportError> {
    let file = File::create(path).map_err(|source| ReportError::Io {
        path: path.to_owned(),
        source,
    })?;
    write_report(report, file).map_err(|source| ReportError::Csv {
        path: path.to_owned(),
        source,
    })
}

pub fn read_report<R: io::Read>(input: R) -> Result<MetricsReport, String> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut snapshots = Vec::new();
    let mut summary = None;
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| e.to_string())?;
        match row.kind.as_str() {
            "snapshot" => snapshots.push(Snapshot {
                t: row.t,
                positive_ratings_discovered: row.positive_ratings_discovered,
                coverage: row.coverage,
                fcpp: row.fcpp,
            }),
            "summary" => summary = Some(row),
            other => return Err(format!("unknown row kind {other:?}")),
        }
    }
    let s = summary.ok_or("missing summary row")?;
    let need = |v: Option<f64>, name: &str| v.ok_or(format!("summary row lacks {name}"));
    Ok(MetricsReport {
        duration: s.t,
        snapshots,
        precision: need(s.precision, "precision")?,
        recommended_deliveries: s
            .recommended_deliveries
            .ok_or("summary row lacks recommended_deliveries")?,
        avg_positive_items_per_user: need(
            s.avg_positive_items_per_user,
            "avg_positive_items_per_user",
        )?,
        users_with_useful_item: s
            .users_with_useful_item
            .ok_or("summary row lacks users_with_useful_item")?,
        latency_p50: need(s.latency_p50, "latency_p50")?,
        latency_p90: need(s.latency_p90, "latency_p90")?,
    })
}

pub fn load_report(path: &Path) -> Result<MetricsReport, ReportError> {
    let file = File::open(path).map_err(|source| ReportError::Io {
        path: path.to_owned(),
        source,
    })?;
    read_report(file).map_err(|msg| ReportError::Format {
        path: path.to_owned(),
        msg,
    })
}
