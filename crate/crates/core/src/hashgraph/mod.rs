//! Hashgraph-style DAG consensus: content-addressed events, ancestry and
//! strong-seeing queries with fork detection, the >2/3 commit rule, a
//! deterministic global order and the view-split checker.

mod order;
mod view;
mod view_split;

pub use order::{global_order, order_key};
pub use view::{create_event, fork_event, CommittedEvent, DagDumpRow, DagView, InsertOutcome, Vote};
pub use view_split::{view_split_bounds, view_split_check, view_split_check_with_threshold, SCHEDULE_LIMIT};

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{NodeId, ShardId};

pub type TxId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    Normal,
    CrossShard,
}

impl TxKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TxKind::Normal => "normal",
            TxKind::CrossShard => "cross_shard",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub vehicle: usize,
    pub origin_rsu: NodeId,
    pub origin_shard: ShardId,
    pub submit_time: f64,
    pub kind: TxKind,
    /// Two transactions conflict iff they share a key and differ in id.
    pub conflict_key: Option<u64>,
    /// RSU of the vehicle's previous transaction, for cross-shard ones.
    pub counterpart_rsu: Option<NodeId>,
}

impl Transaction {
    pub fn conflicts_with(&self, other: &Transaction) -> bool {
        self.id != other.id && self.conflict_key.is_some() && self.conflict_key == other.conflict_key
    }

    fn digest_into(&self, h: &mut Sha256) {
        h.update(self.id.to_le_bytes());
        h.update((self.vehicle as u64).to_le_bytes());
        h.update((self.origin_rsu as u64).to_le_bytes());
        h.update((self.origin_shard as u64).to_le_bytes());
        h.update(self.submit_time.to_bits().to_le_bytes());
        h.update([self.kind as u8]);
        match self.conflict_key {
            Some(k) => {
                h.update([1]);
                h.update(k.to_le_bytes());
            }
            None => h.update([0]),
        }
        match self.counterpart_rsu {
            Some(r) => {
                h.update([1]);
                h.update((r as u64).to_le_bytes());
            }
            None => h.update([0]),
        }
    }
}

/// SHA-256 content digest of an event.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHash(pub [u8; 32]);

impl fmt::Display for EventHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for EventHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EventHash({})", &self.to_string()[..12])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    hash: EventHash,
    creator: NodeId,
    self_parent: Option<EventHash>,
    other_parent: Option<EventHash>,
    timestamp: f64,
    txs: Vec<Transaction>,
    signature_valid: bool,
}

fn digest(
    creator: NodeId,
    self_parent: Option<EventHash>,
    other_parent: Option<EventHash>,
    timestamp: f64,
    txs: &[Transaction],
) -> EventHash {
    let mut h = Sha256::new();
    h.update((creator as u64).to_le_bytes());
    for p in [self_parent, other_parent] {
        match p {
            Some(p) => {
                h.update([1]);
                h.update(p.0);
            }
            None => h.update([0]),
        }
    }
    h.update(timestamp.to_bits().to_le_bytes());
    h.update((txs.len() as u64).to_le_bytes());
    for tx in txs {
        tx.digest_into(&mut h);
    }
    EventHash(h.finalize().into())
}

impl Event {
    pub fn new(
        creator: NodeId,
        self_parent: Option<EventHash>,
        other_parent: Option<EventHash>,
        timestamp: f64,
        txs: Vec<Transaction>,
    ) -> Self {
        let hash = digest(creator, self_parent, other_parent, timestamp, &txs);
        Self {
            hash,
            creator,
            self_parent,
            other_parent,
            timestamp,
            txs,
            signature_valid: true,
        }
    }

    /// Same content, flagged as carrying a bad signature.
    pub fn with_invalid_signature(mut self) -> Self {
        self.signature_valid = false;
        self
    }

    pub fn hash(&self) -> EventHash {
        self.hash
    }

    pub fn creator(&self) -> NodeId {
        self.creator
    }

    pub fn self_parent(&self) -> Option<EventHash> {
        self.self_parent
    }

    pub fn other_parent(&self) -> Option<EventHash> {
        self.other_parent
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn txs(&self) -> &[Transaction] {
        &self.txs
    }

    pub fn signature_valid(&self) -> bool {
        self.signature_valid
    }

    pub fn recompute_hash(&self) -> EventHash {
        digest(self.creator, self.self_parent, self.other_parent, self.timestamp, &self.txs)
    }

    /// Serialized size used for traffic accounting.
    pub fn size_bits(&self, header_bits: f64, tx_bits: f64) -> f64 {
        header_bits + tx_bits * self.txs.len() as f64
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn hash_is_recomputable_and_content_sensitive() {
        let a = Event::new(1, None, None, 0.5, vec![tx(1), tx(2)]);
        assert_eq!(a.hash(), a.recompute_hash());
        let b = Event::new(1, None, None, 0.5, vec![tx(1), tx(3)]);
        let c = Event::new(2, None, None, 0.5, vec![tx(1), tx(2)]);
        let d = Event::new(1, None, Some(a.hash()), 0.5, vec![tx(1), tx(2)]);
        let e = Event::new(1, None, None, 0.25, vec![tx(1), tx(2)]);
        let hashes = [a.hash(), b.hash(), c.hash(), d.hash(), e.hash()];
        for i in 0..hashes.len() {
            for j in (i + 1)..hashes.len() {
                assert_ne!(hashes[i], hashes[j]);
            }
        }
        assert_eq!(a.hash().to_string().len(), 64);
    }

    #[test]
    fn conflicts_need_same_key_and_distinct_id() {
        assert!(keyed(1, 9).conflicts_with(&keyed(2, 9)));
        assert!(!keyed(1, 9).conflicts_with(&keyed(1, 9)));
        assert!(!keyed(1, 9).conflicts_with(&keyed(2, 8)));
        assert!(!tx(1).conflicts_with(&tx(2)));
    }
}
