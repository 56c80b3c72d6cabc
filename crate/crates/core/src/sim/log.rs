use serde::{Deserialize, Serialize};

use crate::ids::{ItemId, NodeId, UserId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    /// Completion time of the transfer.
    pub time: f64,
    pub from: NodeId,
    pub to: NodeId,
    pub item: ItemId,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub time: f64,
    pub item: ItemId,
    pub user: UserId,
    pub node: NodeId,
    /// Whether the receiving node's recommender had the item in the user's
    /// top-k just before the rating was revealed.
    pub predicted_positive: bool,
    pub latency: f64,
}

/// Byte accounting for one contact, per direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactRecord {
    pub start: f64,
    pub end: f64,
    pub node_a: NodeId,
    pub node_b: NodeId,
    pub capacity: f64,
    pub metadata_bytes: u64,
    pub sent_a_to_b: u64,
    pub sent_b_to_a: u64,
}

/// Append-only record of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransferLog {
    pub transfers: Vec<TransferRecord>,
    pub deliveries: Vec<DeliveryRecord>,
    pub contacts: Vec<ContactRecord>,
}

fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

impl TransferLog {
    pub fn transfers_csv(&self) -> String {
        to_csv(&self.transfers)
    }

    pub fn deliveries_csv(&self) -> String {
        to_csv(&self.deliveries)
    }

    pub fn contacts_csv(&self) -> String {
        to_csv(&self.contacts)
    }
}
