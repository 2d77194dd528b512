use std::cmp::Ordering;
use std::collections::HashSet;

use super::{CommittedEvent, EventHash, TxId};

/// Sort key of a committed event: epoch, then median first-seen timestamp,
/// then hash.
pub fn order_key(c: &CommittedEvent) -> (usize, f64, EventHash) {
    (c.epoch, c.median_timestamp, c.event.hash())
}

fn cmp_keys(a: &(usize, f64, EventHash), b: &(usize, f64, EventHash)) -> Ordering {
    a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2))
}

/// Deterministic total order over committed transactions from any number
/// of shard views. An event committed in several views appears once, and
/// a transaction carried by several events keeps its first position.
pub fn global_order<'a, I>(committed: I) -> Vec<TxId>
where
    I: IntoIterator<Item = &'a CommittedEvent>,
{
    let mut entries: Vec<&CommittedEvent> = committed.into_iter().collect();
    entries.sort_by(|a, b| cmp_keys(&order_key(a), &order_key(b)));
    entries.dedup_by(|a, b| a.event.hash() == b.event.hash());
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for c in entries {
        for t in c.event.txs() {
            if seen.insert(t.id) {
                out.push(t.id);
            }
        }
    }
    out
}
