//! Deterministic discrete-event simulation of the sharded RSU network:
//! mobility and traffic, per-epoch rescoring and resharding, tree or gossip
//! dissemination, DAG or single-leader consensus, faults and metrics.

mod engine;
mod faults;
mod gossip;
mod mobility;
mod traffic;

pub use engine::{initial_nodes, run, run_with, RunOptions, RunOutput};
pub use faults::{inject_faults, FaultDraw};
pub use gossip::{gossip_dissemination, GossipSchedule};
pub use mobility::{nearest_rsu, Mobility, Vehicle};
pub use traffic::{generate_transactions, Arrival, ArrivalProcess};

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashgraph::TxKind;
use crate::model::{NodeId, ShardId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Committed,
    /// Still buffered or in flight when the run ended.
    Pending,
    /// Dropped by an adversarial RSU.
    Rejected,
}

/// One row of the transaction log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxLogRow {
    pub tx_id: u64,
    pub vehicle: usize,
    pub origin_rsu: NodeId,
    pub origin_shard: ShardId,
    pub kind: TxKind,
    pub t_sub: f64,
    pub t_con: Option<f64>,
    pub status: TxStatus,
}

/// Bytes one node transmitted during one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ByteLogRow {
    pub epoch: usize,
    pub node: NodeId,
    pub bytes_sent: u64,
}

/// Summary of one run. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Mean of `t_con - t_sub` over committed transactions; absent when
    /// nothing committed.
    pub mean_latency_s: Option<f64>,
    /// Transactions committed inside the submission window per second.
    pub throughput_tps: f64,
    /// Committed over submitted.
    pub success_rate: f64,
    /// Total transmitted megabytes divided by the RSU count.
    pub node_traffic_mb: f64,
    pub cross_shard_throughput_tps: f64,
    pub submitted: u64,
    pub committed: u64,
    pub committed_in_window: u64,
    pub pending: u64,
    pub rejected: u64,
    pub cross_shard_submitted: u64,
    pub cross_shard_committed: u64,
    pub total_bytes: u64,
}

impl MetricsRecord {
    pub fn csv_header() -> Vec<&'static str> {
        vec![
            "mean_latency_s",
            "throughput_tps",
            "success_rate",
            "node_traffic_mb",
            "cross_shard_throughput_tps",
            "submitted",
            "committed",
            "committed_in_window",
            "pending",
            "rejected",
            "cross_shard_submitted",
            "cross_shard_committed",
            "total_bytes",
        ]
    }

    /// Values in [`MetricsRecord::csv_header`] order; an absent latency is
    /// an empty field.
    pub fn csv_values(&self) -> Vec<String> {
        vec![
            self.mean_latency_s.map(|v| v.to_string()).unwrap_or_default(),
            self.throughput_tps.to_string(),
            self.success_rate.to_string(),
            self.node_traffic_mb.to_string(),
            self.cross_shard_throughput_tps.to_string(),
            self.submitted.to_string(),
            self.committed.to_string(),
            self.committed_in_window.to_string(),
            self.pending.to_string(),
            self.rejected.to_string(),
            self.cross_shard_submitted.to_string(),
            self.cross_shard_committed.to_string(),
            self.total_bytes.to_string(),
        ]
    }
}

/// Per-epoch series row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub start_s: f64,
    pub online: usize,
    pub byzantine: usize,
    pub fitness: f64,
    pub min_shard_size: usize,
    pub max_shard_size: usize,
    /// Worst root-to-member latency over all shard trees.
    pub max_tree_latency_s: f64,
    pub mean_trust: f64,
    pub mean_stability: f64,
    pub committed: u64,
    pub cross_shard_committed: u64,
}

/// Metrics from raw logs. `duration_s` is the submission window and `p`
/// the RSU count.
pub fn compute_metrics(txs: &[TxLogRow], bytes: &[ByteLogRow], duration_s: f64, p: usize) -> Result<MetricsRecord> {
    if !(duration_s > 0.0) {
        return Err(Error::Domain(format!("duration {duration_s} must be > 0")));
    }
    if p == 0 {
        return Err(Error::Domain("RSU count must be >= 1".into()));
    }
    let mut m = MetricsRecord {
        mean_latency_s: None,
        throughput_tps: 0.0,
        success_rate: 0.0,
        node_traffic_mb: 0.0,
        cross_shard_throughput_tps: 0.0,
        submitted: 0,
        committed: 0,
        committed_in_window: 0,
        pending: 0,
        rejected: 0,
        cross_shard_submitted: 0,
        cross_shard_committed: 0,
        total_bytes: 0,
    };
    let mut latency_sum = 0.0;
    let mut cross_in_window = 0u64;
    for row in txs {
        m.submitted += 1;
        let cross = row.kind == TxKind::CrossShard;
        if cross {
            m.cross_shard_submitted += 1;
        }
        match (row.status, row.t_con) {
            (TxStatus::Committed, Some(t)) => {
                m.committed += 1;
                latency_sum += t - row.t_sub;
                if cross {
                    m.cross_shard_committed += 1;
                }
                if t <= duration_s {
                    m.committed_in_window += 1;
                    if cross {
                        cross_in_window += 1;
                    }
                }
            }
            (TxStatus::Pending, None) => m.pending += 1,
            (TxStatus::Rejected, None) => m.rejected += 1,
            (status, t) => {
                return Err(Error::Domain(format!("tx {} has status {status:?} with t_con {t:?}", row.tx_id)));
            }
        }
    }
    m.total_bytes = bytes.iter().map(|b| b.bytes_sent).sum();
    if m.committed > 0 {
        m.mean_latency_s = Some(latency_sum / m.committed as f64);
    }
    m.throughput_tps = m.committed_in_window as f64 / duration_s;
    m.cross_shard_throughput_tps = cross_in_window as f64 / duration_s;
    m.success_rate = if m.submitted == 0 { 1.0 } else { m.committed as f64 / m.submitted as f64 };
    m.node_traffic_mb = m.total_bytes as f64 / 1e6 / p as f64;
    Ok(m)
}

pub fn write_tx_log<W: Write>(w: W, rows: &[TxLogRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["tx_id", "vehicle", "origin_rsu", "origin_shard", "kind", "t_sub", "t_con", "status"])?;
    for r in rows {
        let status = match r.status {
            TxStatus::Committed => "committed",
            TxStatus::Pending => "pending",
            TxStatus::Rejected => "rejected",
        };
        out.write_record([
            r.tx_id.to_string(),
            r.vehicle.to_string(),
            r.origin_rsu.to_string(),
            r.origin_shard.to_string(),
            r.kind.as_str().to_string(),
            r.t_sub.to_string(),
            r.t_con.map(|t| t.to_string()).unwrap_or_default(),
            status.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_tx_log<R: Read>(r: R) -> Result<Vec<TxLogRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_byte_log<W: Write>(w: W, rows: &[ByteLogRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    if rows.is_empty() {
        out.write_record(["epoch", "node", "bytes_sent"])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_byte_log<R: Read>(r: R) -> Result<Vec<ByteLogRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_epoch_series<W: Write>(w: W, rows: &[EpochRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: u64, kind: TxKind, t_sub: f64, t_con: Option<f64>, status: TxStatus) -> TxLogRow {
        TxLogRow {
            tx_id: id,
            vehicle: 0,
            origin_rsu: 0,
            origin_shard: 0,
            kind,
            t_sub,
            t_con,
            status,
        }
    }

    #[test]
    fn latency_by_hand() {
        let txs = vec![
            row(0, TxKind::Normal, 0.0, Some(2.0), TxStatus::Committed),
            row(1, TxKind::Normal, 1.0, Some(3.0), TxStatus::Committed),
        ];
        let m = compute_metrics(&txs, &[], 10.0, 1).unwrap();
        assert_eq!(m.mean_latency_s, Some(2.0));
    }

    #[test]
    fn throughput_success_and_traffic_by_hand() {
        let mut txs: Vec<TxLogRow> =
            (0..3000).map(|i| row(i, TxKind::Normal, 0.0, Some(1.0), TxStatus::Committed)).collect();
        let m = compute_metrics(&txs, &[], 10.0, 1).unwrap();
        assert_eq!(m.throughput_tps, 300.0);

        txs.truncate(90);
        txs.extend((90..100).map(|i| row(i, TxKind::Normal, 0.0, None, TxStatus::Pending)));
        let bytes = [10_000_000, 20_000_000, 30_000_000]
            .iter()
            .enumerate()
            .map(|(node, &b)| ByteLogRow { epoch: 0, node, bytes_sent: b })
            .collect::<Vec<_>>();
        let m = compute_metrics(&txs, &bytes, 10.0, 3).unwrap();
        assert_eq!(m.success_rate, 0.9);
        assert_eq!(m.node_traffic_mb, 20.0);
        assert_eq!(m.submitted, m.committed + m.pending + m.rejected);
    }

    #[test]
    fn window_and_cross_shard_counting() {
        let txs = vec![
            row(0, TxKind::CrossShard, 1.0, Some(4.0), TxStatus::Committed),
            row(1, TxKind::CrossShard, 8.0, Some(12.0), TxStatus::Committed),
            row(2, TxKind::Normal, 9.0, None, TxStatus::Rejected),
        ];
        let m = compute_metrics(&txs, &[], 10.0, 1).unwrap();
        assert_eq!(m.committed, 2);
        assert_eq!(m.committed_in_window, 1);
        assert_eq!(m.cross_shard_throughput_tps, 0.1);
        assert_eq!(m.rejected, 1);
        assert_eq!(m.mean_latency_s, Some(3.5));
    }

    #[test]
    fn nothing_committed_leaves_latency_absent() {
        let txs = vec![row(0, TxKind::Normal, 0.0, None, TxStatus::Pending)];
        let m = compute_metrics(&txs, &[], 1.0, 1).unwrap();
        assert_eq!(m.mean_latency_s, None);
        assert_eq!(m.success_rate, 0.0);
    }

    #[test]
    fn inconsistent_rows_are_refused() {
        let txs = vec![row(0, TxKind::Normal, 0.0, None, TxStatus::Committed)];
        assert!(compute_metrics(&txs, &[], 1.0, 1).is_err());
        assert!(compute_metrics(&[], &[], 0.0, 1).is_err());
    }

    #[test]
    fn logs_roundtrip_exactly() {
        let txs = vec![
            row(7, TxKind::CrossShard, 0.1 + 0.2, Some(1.0 / 3.0), TxStatus::Committed),
            row(8, TxKind::Normal, 2.5, None, TxStatus::Pending),
        ];
        let mut buf = Vec::new();
        write_tx_log(&mut buf, &txs).unwrap();
        assert_eq!(read_tx_log(&buf[..]).unwrap(), txs);

        let bytes = vec![ByteLogRow { epoch: 1, node: 3, bytes_sent: 99 }];
        let mut buf = Vec::new();
        write_byte_log(&mut buf, &bytes).unwrap();
        assert_eq!(read_byte_log(&buf[..]).unwrap(), bytes);
    }
}
