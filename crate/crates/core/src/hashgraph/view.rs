use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Event, EventHash, Transaction, TxId};
use crate::error::{Error, Result};
use crate::model::NodeId;

const UNSEEN: u32 = u32::MAX;

/// How a member votes on events it strongly sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    /// YES iff the signature is valid and no conflicting transaction has
    /// committed.
    Honest,
    AlwaysYes,
    AlwaysNo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Accepted,
    Duplicate,
    /// Stored, but its creator is now marked equivocating.
    ForkDetected,
    /// Buffered until the missing parent arrives.
    MissingParent,
}

#[derive(Clone, Debug)]
pub struct CommittedEvent {
    pub event: Arc<Event>,
    pub epoch: usize,
    pub committed_at: f64,
    /// Median timestamp of the first event of each member that saw it, as
    /// known at commit time; see [`DagView::settled_commits`].
    pub median_timestamp: f64,
}

/// One row of the optional DAG dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DagDumpRow {
    pub hash: String,
    pub creator: NodeId,
    /// Self-parent then other-parent, `;`-separated; absent ones omitted.
    pub parents: String,
    pub epoch: usize,
    pub committed_at: Option<f64>,
}

#[derive(Clone, Debug)]
struct Meta {
    creator: usize,
    seq: u32,
    /// Highest sequence number of each creator among ancestors, or -1.
    last_anc: Vec<i32>,
    /// Sequence number of each creator's first event that sees this one.
    first_see: Vec<u32>,
    first_see_count: usize,
    committed_at: Option<f64>,
}

#[derive(Clone, Debug)]
struct Candidate {
    counted: Vec<bool>,
    honest: usize,
    always_yes: usize,
}

/// The DAG as seen by one shard during one epoch.
#[derive(Clone, Debug)]
pub struct DagView {
    members: Vec<NodeId>,
    pos: BTreeMap<NodeId, usize>,
    votes: Vec<Vote>,
    epoch: usize,
    max_txs: usize,
    events: Vec<Arc<Event>>,
    meta: Vec<Meta>,
    by_hash: HashMap<EventHash, usize>,
    by_slot: HashMap<(usize, Option<EventHash>), usize>,
    chains: Vec<Vec<usize>>,
    latest: Vec<Option<usize>>,
    equivocating: Vec<bool>,
    waiting: HashMap<EventHash, Vec<Arc<Event>>>,
    buffered: HashSet<EventHash>,
    candidates: BTreeMap<usize, Candidate>,
    committed: Vec<CommittedEvent>,
    committed_keys: HashMap<u64, TxId>,
}

impl DagView {
    pub fn new(members: &[NodeId], epoch: usize, max_txs: usize) -> Result<Self> {
        let mut sorted = members.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.is_empty() {
            return Err(Error::Domain("a view needs at least one member".into()));
        }
        if max_txs == 0 {
            return Err(Error::Domain("max_txs must be >= 1".into()));
        }
        let u = sorted.len();
        Ok(Self {
            pos: sorted.iter().enumerate().map(|(i, &m)| (m, i)).collect(),
            members: sorted,
            votes: vec![Vote::Honest; u],
            epoch,
            max_txs,
            events: Vec::new(),
            meta: Vec::new(),
            by_hash: HashMap::new(),
            by_slot: HashMap::new(),
            chains: vec![Vec::new(); u],
            latest: vec![None; u],
            equivocating: vec![false; u],
            waiting: HashMap::new(),
            buffered: HashSet::new(),
            candidates: BTreeMap::new(),
            committed: Vec::new(),
            committed_keys: HashMap::new(),
        })
    }

    pub fn set_vote(&mut self, node: NodeId, vote: Vote) -> Result<()> {
        let p = self.position(node)?;
        self.votes[p] = vote;
        self.recount_all();
        Ok(())
    }

    pub fn members(&self) -> &[NodeId] {
        &self.members
    }

    /// Number of members.
    pub fn u(&self) -> usize {
        self.members.len()
    }

    /// Largest fault count with `u >= 3f + 1`.
    pub fn f(&self) -> usize {
        (self.u() - 1) / 3
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn max_txs(&self) -> usize {
        self.max_txs
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn buffered_len(&self) -> usize {
        self.buffered.len()
    }

    pub fn contains(&self, h: EventHash) -> bool {
        self.by_hash.contains_key(&h)
    }

    pub fn get(&self, h: EventHash) -> Option<&Arc<Event>> {
        self.by_hash.get(&h).map(|&i| &self.events[i])
    }

    /// Events in insertion order, which is always a topological order.
    pub fn events(&self) -> &[Arc<Event>] {
        &self.events
    }

    pub fn latest(&self, node: NodeId) -> Option<EventHash> {
        let p = *self.pos.get(&node)?;
        self.latest[p].map(|i| self.events[i].hash())
    }

    pub fn is_equivocating(&self, node: NodeId) -> bool {
        self.pos.get(&node).is_some_and(|&p| self.equivocating[p])
    }

    pub fn committed(&self) -> &[CommittedEvent] {
        &self.committed
    }

    /// Committed events with medians recomputed from the current DAG.
    /// The stored value reflects only the members heard from at commit
    /// time, so views that end with the same DAG agree on these medians
    /// but not necessarily on the stored ones.
    pub fn settled_commits(&self) -> Vec<CommittedEvent> {
        self.committed
            .iter()
            .map(|c| CommittedEvent {
                median_timestamp: self.median_timestamp(self.by_hash[&c.event.hash()]),
                ..c.clone()
            })
            .collect()
    }

    pub fn is_committed(&self, h: EventHash) -> bool {
        self.by_hash.get(&h).is_some_and(|&i| self.meta[i].committed_at.is_some())
    }

    /// Transactions of stored events that never committed, with creators.
    pub fn uncommitted(&self) -> Vec<(NodeId, &Transaction)> {
        self.events
            .iter()
            .zip(&self.meta)
            .filter(|(_, m)| m.committed_at.is_none())
            .flat_map(|(e, _)| e.txs().iter().map(move |t| (e.creator(), t)))
            .collect()
    }

    fn position(&self, node: NodeId) -> Result<usize> {
        self.pos.get(&node).copied().ok_or(Error::UnknownNode(node))
    }

    fn index(&self, h: EventHash) -> Result<usize> {
        self.by_hash
            .get(&h)
            .copied()
            .ok_or_else(|| Error::Domain(format!("event {h:?} not in view")))
    }

    fn supermajority(&self, k: usize) -> bool {
        3 * k > 2 * self.u()
    }

    fn sees_idx(&self, x: usize, y: usize) -> bool {
        let (mx, my) = (&self.meta[x], &self.meta[y]);
        !self.equivocating[my.creator] && mx.last_anc[my.creator] >= my.seq as i32
    }

    /// Creator `c` supplies an intermediary iff its first event seeing `y`
    /// is an ancestor of `x`; creator chains are linear, so one comparison
    /// per creator decides it.
    fn strongly_sees_idx(&self, x: usize, y: usize) -> bool {
        let (mx, my) = (&self.meta[x], &self.meta[y]);
        if self.equivocating[my.creator] {
            return false;
        }
        let count = (0..self.u())
            .filter(|&c| !self.equivocating[c] && my.first_see[c] != UNSEEN && my.first_see[c] as i32 <= mx.last_anc[c])
            .count();
        self.supermajority(count)
    }

    /// `y` is an ancestor of `x` (or `x` itself) and its creator has not
    /// forked.
    pub fn sees(&self, x: EventHash, y: EventHash) -> Result<bool> {
        Ok(self.sees_idx(self.index(x)?, self.index(y)?))
    }

    /// More than `2u/3` distinct creators have an event that `x` sees and
    /// that sees `y`.
    pub fn strongly_sees(&self, x: EventHash, y: EventHash) -> Result<bool> {
        Ok(self.strongly_sees_idx(self.index(x)?, self.index(y)?))
    }

    pub fn insert_event(&mut self, ev: Arc<Event>) -> Result<InsertOutcome> {
        let outcome = self.insert_one(ev.clone())?;
        if matches!(outcome, InsertOutcome::Accepted | InsertOutcome::ForkDetected) {
            let mut ready = vec![ev.hash()];
            while let Some(h) = ready.pop() {
                for w in self.waiting.remove(&h).unwrap_or_default() {
                    self.buffered.remove(&w.hash());
                    let wh = w.hash();
                    if matches!(self.insert_one(w)?, InsertOutcome::Accepted | InsertOutcome::ForkDetected) {
                        ready.push(wh);
                    }
                }
            }
        }
        Ok(outcome)
    }

    fn insert_one(&mut self, ev: Arc<Event>) -> Result<InsertOutcome> {
        let h = ev.hash();
        if self.by_hash.contains_key(&h) || self.buffered.contains(&h) {
            return Ok(InsertOutcome::Duplicate);
        }
        if ev.recompute_hash() != h {
            return Err(Error::Domain(format!("event {h:?} fails its digest check")));
        }
        let c = self.position(ev.creator())?;
        if ev.txs().len() > self.max_txs {
            return Err(Error::Domain(format!("{} transactions exceed the cap {}", ev.txs().len(), self.max_txs)));
        }
        for p in [ev.self_parent(), ev.other_parent()].into_iter().flatten() {
            if !self.by_hash.contains_key(&p) {
                self.buffered.insert(h);
                self.waiting.entry(p).or_default().push(ev);
                return Ok(InsertOutcome::MissingParent);
            }
        }
        let sp = ev.self_parent().map(|p| self.by_hash[&p]);
        let op = ev.other_parent().map(|p| self.by_hash[&p]);
        if let Some(s) = sp {
            if self.meta[s].creator != c {
                return Err(Error::Domain(format!("self-parent of {h:?} has another creator")));
            }
        }
        let u = self.u();
        let fork = self.by_slot.contains_key(&(c, ev.self_parent()));
        let seq = sp.map_or(0, |s| self.meta[s].seq + 1);
        let base: Vec<i32> = sp.map_or_else(|| vec![-1; u], |s| self.meta[s].last_anc.clone());
        let mut last_anc = base.clone();
        if let Some(o) = op {
            for (a, &b) in last_anc.iter_mut().zip(&self.meta[o].last_anc) {
                *a = (*a).max(b);
            }
        }
        last_anc[c] = last_anc[c].max(seq as i32);

        let idx = self.events.len();
        self.events.push(ev);
        self.meta.push(Meta {
            creator: c,
            seq,
            last_anc,
            first_see: vec![UNSEEN; u],
            first_see_count: 0,
            committed_at: None,
        });
        self.by_hash.insert(h, idx);
        self.by_slot.entry((c, self.events[idx].self_parent())).or_insert(idx);
        if seq as usize == self.chains[c].len() {
            self.chains[c].push(idx);
        }
        if self.latest[c].is_none_or(|l| self.meta[l].seq < seq) {
            self.latest[c] = Some(idx);
        }

        // Everything newly reachable from c's chain is first seen here.
        let mut fresh = Vec::new();
        for d in 0..u {
            let hi = self.meta[idx].last_anc[d];
            for s in (base[d] + 1)..=hi {
                let Some(&e) = self.chains[d].get(s as usize) else {
                    continue;
                };
                let m = &mut self.meta[e];
                if m.first_see[c] == UNSEEN {
                    m.first_see[c] = seq;
                    m.first_see_count += 1;
                    let k = m.first_see_count;
                    if 3 * k > 2 * u && 3 * (k - 1) <= 2 * u && m.committed_at.is_none() {
                        fresh.push(e);
                    }
                }
            }
        }

        if fork {
            self.equivocating[c] = true;
            for e in fresh {
                self.candidates.insert(e, self.empty_candidate());
            }
            self.recount_all();
            return Ok(InsertOutcome::ForkDetected);
        }
        if !self.equivocating[c] && self.latest[c] == Some(idx) {
            let ys: Vec<usize> = self.candidates.keys().copied().collect();
            for y in ys {
                if !self.candidates[&y].counted[c] && self.strongly_sees_idx(idx, y) {
                    self.count_vote(y, c);
                }
            }
        }
        for e in fresh {
            self.candidates.insert(e, self.empty_candidate());
            self.recount(e);
        }
        Ok(InsertOutcome::Accepted)
    }

    fn empty_candidate(&self) -> Candidate {
        Candidate {
            counted: vec![false; self.u()],
            honest: 0,
            always_yes: 0,
        }
    }

    fn count_vote(&mut self, y: usize, member: usize) {
        let vote = self.votes[member];
        let cand = self.candidates.get_mut(&y).expect("candidate exists");
        cand.counted[member] = true;
        match vote {
            Vote::Honest => cand.honest += 1,
            Vote::AlwaysYes => cand.always_yes += 1,
            Vote::AlwaysNo => {}
        }
    }

    fn recount(&mut self, y: usize) {
        *self.candidates.get_mut(&y).expect("candidate exists") = self.empty_candidate();
        for m in 0..self.u() {
            if self.equivocating[m] {
                continue;
            }
            if let Some(l) = self.latest[m] {
                if self.strongly_sees_idx(l, y) {
                    self.count_vote(y, m);
                }
            }
        }
    }

    fn recount_all(&mut self) {
        let ys: Vec<usize> = self.candidates.keys().copied().collect();
        for y in ys {
            if self.equivocating[self.meta[y].creator] {
                self.candidates.remove(&y);
            } else {
                self.recount(y);
            }
        }
    }

    fn conflicts_with_committed(&self, ev: &Event) -> bool {
        ev.txs().iter().any(|t| {
            t.conflict_key
                .and_then(|k| self.committed_keys.get(&k))
                .is_some_and(|&id| id != t.id)
        })
    }

    fn median_timestamp(&self, y: usize) -> f64 {
        let my = &self.meta[y];
        let mut ts: Vec<f64> = (0..self.u())
            .filter(|&c| !self.equivocating[c] && my.first_see[c] != UNSEEN)
            .filter_map(|c| self.chains[c].get(my.first_see[c] as usize))
            .map(|&e| self.events[e].timestamp())
            .collect();
        if ts.is_empty() {
            return self.events[y].timestamp();
        }
        ts.sort_by(f64::total_cmp);
        ts[(ts.len() - 1) / 2]
    }

    /// Commit every candidate whose YES votes from members' latest events
    /// exceed `2u/3`.
    pub fn commit_pass(&mut self, now: f64) -> Vec<CommittedEvent> {
        let eligible = (0..self.u())
            .filter(|&m| !self.equivocating[m] && self.votes[m] != Vote::AlwaysNo)
            .count();
        if !self.supermajority(eligible) {
            return Vec::new();
        }
        let always_yes = (0..self.u())
            .filter(|&m| !self.equivocating[m] && self.votes[m] == Vote::AlwaysYes)
            .count();
        let mut out = Vec::new();
        // Storage order depends on delivery order, so conflicts are settled
        // in (timestamp, hash) order instead.
        let mut ys: Vec<usize> = self.candidates.keys().copied().collect();
        ys.sort_by(|&a, &b| {
            let (ea, eb) = (&self.events[a], &self.events[b]);
            ea.timestamp().total_cmp(&eb.timestamp()).then(ea.hash().cmp(&eb.hash()))
        });
        for y in ys {
            if self.equivocating[self.meta[y].creator] {
                self.candidates.remove(&y);
                continue;
            }
            let ev = self.events[y].clone();
            let honest_yes = ev.signature_valid() && !self.conflicts_with_committed(&ev);
            let cand = &self.candidates[&y];
            let votes = if honest_yes { cand.honest } else { 0 } + cand.always_yes;
            if self.supermajority(votes) {
                self.candidates.remove(&y);
                self.meta[y].committed_at = Some(now);
                for t in ev.txs() {
                    if let Some(k) = t.conflict_key {
                        self.committed_keys.entry(k).or_insert(t.id);
                    }
                }
                let c = CommittedEvent {
                    median_timestamp: self.median_timestamp(y),
                    event: ev,
                    epoch: self.epoch,
                    committed_at: now,
                };
                self.committed.push(c.clone());
                out.push(c);
            } else if !honest_yes && !self.supermajority(always_yes) {
                // Honest members will never vote YES on it.
                self.candidates.remove(&y);
            }
        }
        out
    }

    pub fn dump_rows(&self) -> Vec<DagDumpRow> {
        self.events
            .iter()
            .zip(&self.meta)
            .map(|(e, m)| DagDumpRow {
                hash: e.hash().to_string(),
                creator: e.creator(),
                parents: [e.self_parent(), e.other_parent()]
                    .into_iter()
                    .flatten()
                    .map(|p| p.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
                epoch: self.epoch,
                committed_at: m.committed_at,
            })
            .collect()
    }

    /// Order-free summary of the view: per event (hash, ancestry vector,
    /// first-see vector, committed), sorted by hash, plus equivocators.
    pub fn fingerprint(&self) -> (Vec<(EventHash, Vec<i32>, Vec<u32>, bool)>, Vec<NodeId>) {
        let mut rows: Vec<_> = self
            .events
            .iter()
            .zip(&self.meta)
            .map(|(e, m)| (e.hash(), m.last_anc.clone(), m.first_see.clone(), m.committed_at.is_some()))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        let eq = (0..self.u()).filter(|&c| self.equivocating[c]).map(|c| self.members[c]).collect();
        (rows, eq)
    }
}

/// Create and insert the creator's next event(s). More than the cap of
/// transactions splits into several chained events.
pub fn create_event(
    view: &mut DagView,
    creator: NodeId,
    other_parent: Option<EventHash>,
    txs: Vec<Transaction>,
    now: f64,
) -> Result<Vec<Arc<Event>>> {
    let cap = view.max_txs();
    let chunks: Vec<Vec<Transaction>> = if txs.is_empty() {
        vec![Vec::new()]
    } else {
        txs.chunks(cap).map(<[Transaction]>::to_vec).collect()
    };
    let mut out = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        let ev = Arc::new(Event::new(creator, view.latest(creator), other_parent, now, chunk));
        match view.insert_event(ev.clone())? {
            InsertOutcome::Accepted => out.push(ev),
            other => return Err(Error::Domain(format!("own event not accepted: {other:?}"))),
        }
    }
    Ok(out)
}

/// Create and insert an event that forks the creator's chain: it shares
/// the self-parent of the creator's latest event.
pub fn fork_event(view: &mut DagView, creator: NodeId, txs: Vec<Transaction>, now: f64) -> Result<Arc<Event>> {
    let latest = view
        .latest(creator)
        .ok_or_else(|| Error::Domain(format!("node {creator} has no event to fork")))?;
    let sp = view.get(latest).expect("latest is stored").self_parent();
    let ev = Arc::new(Event::new(creator, sp, None, now, txs));
    view.insert_event(ev.clone())?;
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{keyed, tx};
    use super::*;

    fn ev(creator: NodeId, sp: Option<&Arc<Event>>, op: Option<&Arc<Event>>, t: f64) -> Arc<Event> {
        Arc::new(Event::new(creator, sp.map(|e| e.hash()), op.map(|e| e.hash()), t, vec![tx(t.to_bits())]))
    }

    /// Round-robin gossip: in each round every member creates an event whose
    /// other-parent is the previous member's latest event.
    fn synced(view: &mut DagView, rounds: usize) {
        let members = view.members().to_vec();
        let mut t: f64 = 0.0;
        for _ in 0..rounds {
            for (i, &m) in members.iter().enumerate() {
                let prev = members[(i + members.len() - 1) % members.len()];
                let op = view.latest(prev);
                t += 0.01;
                create_event(view, m, op, vec![tx(t.to_bits())], t).unwrap();
            }
        }
    }

    #[test]
    fn genesis_has_no_self_parent_and_split_at_cap() {
        let mut v = DagView::new(&[0, 1, 2, 3], 0, 1024).unwrap();
        let txs: Vec<Transaction> = (0..1500).map(tx).collect();
        let evs = create_event(&mut v, 0, None, txs, 0.0).unwrap();
        assert_eq!(evs.len(), 2);
        assert_eq!(evs[0].txs().len(), 1024);
        assert_eq!(evs[1].txs().len(), 476);
        assert_eq!(evs[0].self_parent(), None);
        assert_eq!(evs[1].self_parent(), Some(evs[0].hash()));
        for e in &evs {
            assert_eq!(e.hash(), e.recompute_hash());
        }
    }

    #[test]
    fn duplicate_and_missing_parent() {
        let mut v = DagView::new(&[0, 1, 2, 3], 0, 8).unwrap();
        let a = ev(0, None, None, 0.1);
        let b = ev(1, None, Some(&a), 0.2);
        assert_eq!(v.insert_event(b.clone()).unwrap(), InsertOutcome::MissingParent);
        assert_eq!(v.insert_event(b.clone()).unwrap(), InsertOutcome::Duplicate);
        assert_eq!(v.insert_event(a.clone()).unwrap(), InsertOutcome::Accepted);
        assert!(v.contains(b.hash()));
        assert_eq!(v.buffered_len(), 0);
        assert_eq!(v.insert_event(a).unwrap(), InsertOutcome::Duplicate);
    }

    #[test]
    fn fork_marks_equivocator() {
        let mut v = DagView::new(&[0, 1, 2, 3], 0, 8).unwrap();
        let a = ev(0, None, None, 0.1);
        let b1 = ev(0, Some(&a), None, 0.2);
        let b2 = ev(0, Some(&a), None, 0.3);
        v.insert_event(a.clone()).unwrap();
        assert_eq!(v.insert_event(b1.clone()).unwrap(), InsertOutcome::Accepted);
        assert!(v.sees(b1.hash(), a.hash()).unwrap());
        assert_eq!(v.insert_event(b2.clone()).unwrap(), InsertOutcome::ForkDetected);
        assert!(v.is_equivocating(0));
        assert!(!v.sees(b1.hash(), a.hash()).unwrap());
        assert!(v.contains(b2.hash()));
    }

    #[test]
    fn sees_is_reflexive_and_parentless_is_isolated() {
        let mut v = DagView::new(&[0, 1, 2, 3], 0, 8).unwrap();
        let a = ev(0, None, None, 0.1);
        let b = ev(1, None, None, 0.2);
        v.insert_event(a.clone()).unwrap();
        v.insert_event(b.clone()).unwrap();
        assert!(v.sees(a.hash(), a.hash()).unwrap());
        assert!(!v.sees(a.hash(), b.hash()).unwrap());
        assert!(!v.strongly_sees(a.hash(), a.hash()).unwrap());
    }

    #[test]
    fn strongly_sees_counts_creators() {
        // y by 0; creators 1, 2 see y; x by 3 sees both, and 3 itself sees y.
        let mut v = DagView::new(&[0, 1, 2, 3], 0, 8).unwrap();
        let y = ev(0, None, None, 0.0);
        let z1 = ev(1, None, Some(&y), 0.1);
        let z2 = ev(2, None, Some(&y), 0.2);
        let w = ev(3, None, Some(&z1), 0.3);
        let x = ev(3, Some(&w), Some(&z2), 0.4);
        for e in [&y, &z1, &z2, &w, &x] {
            v.insert_event(e.clone()).unwrap();
        }
        // Intermediaries from creators 1, 2, 3 (and 0 via y itself): 4 > 8/3.
        assert!(v.strongly_sees(x.hash(), y.hash()).unwrap());
        // w reaches y only through creators 1 and 3 (and y by 0): 3 > 8/3.
        assert!(v.strongly_sees(w.hash(), y.hash()).unwrap());
        // z1 reaches through creators 0 and 1 only.
        assert!(!v.strongly_sees(z1.hash(), y.hash()).unwrap());
    }

    #[test]
    fn fault_free_shard_commits_everything_eventually() {
        let mut v = DagView::new(&[0, 1, 2, 3], 0, 8).unwrap();
        synced(&mut v, 12);
        v.commit_pass(1.0);
        // All but the last few rounds are deep enough to be strongly seen.
        let committed = v.committed().len();
        assert!(committed >= 4 * 8, "committed {committed}");
        let early: Vec<EventHash> = v.events()[..16].iter().map(|e| e.hash()).collect();
        assert!(early.iter().all(|&h| v.is_committed(h)));
    }

    #[test]
    fn silent_minority_does_not_block() {
        // u = 4, f = 1: member 3 never creates events.
        let mut v = DagView::new(&[0, 1, 2, 3], 0, 8).unwrap();
        let mut t: f64 = 0.0;
        for _ in 0..10 {
            for (m, prev) in [(0, 2), (1, 0), (2, 1)] {
                t += 0.01;
                let op = v.latest(prev);
                create_event(&mut v, m, op, vec![tx(t.to_bits())], t).unwrap();
            }
        }
        assert!(!v.commit_pass(1.0).is_empty());
    }

    #[test]
    fn conflicting_tx_never_commits_after_first() {
        let mut v = DagView::new(&[0, 1, 2, 3], 0, 8).unwrap();
        create_event(&mut v, 0, None, vec![keyed(1, 77)], 0.0).unwrap();
        create_event(&mut v, 1, None, vec![keyed(2, 77)], 0.0).unwrap();
        synced(&mut v, 10);
        v.commit_pass(1.0);
        let ids: Vec<TxId> = v
            .committed()
            .iter()
            .flat_map(|c| c.event.txs().iter().filter(|t| t.conflict_key == Some(77)).map(|t| t.id))
            .collect();
        assert_eq!(ids.len(), 1, "exactly one of the pair commits");
    }

    #[test]
    fn invalid_signature_gets_no_honest_votes() {
        let mut v = DagView::new(&[0, 1, 2, 3], 0, 8).unwrap();
        let bad = Arc::new(Event::new(0, None, None, 0.0, vec![tx(9)]).with_invalid_signature());
        v.insert_event(bad.clone()).unwrap();
        synced(&mut v, 10);
        v.commit_pass(1.0);
        assert!(!v.is_committed(bad.hash()));
        assert!(!v.committed().is_empty());
    }

    #[test]
    fn vote_no_majority_stalls() {
        let mut v = DagView::new(&[0, 1, 2, 3], 0, 8).unwrap();
        v.set_vote(2, Vote::AlwaysNo).unwrap();
        v.set_vote(3, Vote::AlwaysNo).unwrap();
        synced(&mut v, 10);
        assert!(v.commit_pass(1.0).is_empty());
    }

    #[test]
    fn committed_set_is_monotone() {
        let mut v = DagView::new(&[0, 1, 2, 3, 4], 0, 8).unwrap();
        let mut prev = 0;
        for r in 0..10 {
            synced(&mut v, 1);
            v.commit_pass(r as f64);
            assert!(v.committed().len() >= prev);
            prev = v.committed().len();
        }
        let hashes: Vec<EventHash> = v.committed().iter().map(|c| c.event.hash()).collect();
        assert!(hashes.iter().all(|&h| v.is_committed(h)));
    }

    #[test]
    fn foreign_and_malformed_events_are_errors() {
        let mut v = DagView::new(&[0, 1, 2, 3], 0, 2).unwrap();
        assert!(matches!(v.insert_event(ev(9, None, None, 0.0)), Err(Error::UnknownNode(9))));
        let big = Arc::new(Event::new(0, None, None, 0.0, vec![tx(1), tx(2), tx(3)]));
        assert!(v.insert_event(big).is_err());
        let a = ev(0, None, None, 0.0);
        v.insert_event(a.clone()).unwrap();
        assert!(v.insert_event(ev(1, Some(&a), None, 0.1)).is_err());
    }

    #[test]
    fn dump_lists_every_event() {
        let mut v = DagView::new(&[0, 1, 2, 3], 2, 8).unwrap();
        synced(&mut v, 6);
        v.commit_pass(0.5);
        let rows = v.dump_rows();
        assert_eq!(rows.len(), v.len());
        assert!(rows.iter().all(|r| r.epoch == 2 && r.hash.len() == 64));
        assert_eq!(rows[0].parents, "");
        assert_eq!(rows.iter().filter(|r| r.committed_at.is_some()).count(), v.committed().len());
    }

    #[test]
    fn uncommitted_lists_pending_txs() {
        let mut v = DagView::new(&[0, 1, 2, 3], 0, 8).unwrap();
        create_event(&mut v, 2, None, vec![tx(5), tx(6)], 0.0).unwrap();
        let pending: Vec<(NodeId, TxId)> = v.uncommitted().into_iter().map(|(c, t)| (c, t.id)).collect();
        assert_eq!(pending, vec![(2, 5), (2, 6)]);
    }
}
