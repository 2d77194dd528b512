use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use super::{
    compute_metrics, gossip_dissemination, ArrivalProcess, ByteLogRow, EpochRow, GossipSchedule, MetricsRecord,
    Mobility, TxLogRow, TxStatus,
};
use crate::error::{Error, Result};
use crate::hashgraph::{create_event, fork_event, DagDumpRow, DagView, Event, EventHash, Transaction, TxId, TxKind, Vote};
use crate::model::{
    euclidean_distance, Ablation, ByzantinePolicy, NodeId, Placement, Position, RsuNode, SeedSource, ShardId,
    SimConfig, StabilityIndicators,
};
use crate::scoring::{apply_trust, stability_score, trust_delta, EpochNodeStats, PopulationComputeStats, Role};
use crate::sharding::{fitness, run_optimizer, GsaParams, ShardAssignment, Variant};
use crate::smlbt::{build_tree, cross_shard_links, tree_edge_rows, BroadcastTree, CrossLink, LatencyGraph, TreeEdgeRow};

/// Mobility and arrival generation step in seconds.
const MOBILITY_DT: f64 = 0.1;

/// Optional outputs that cost memory on long runs.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub tree_edges: bool,
    pub dag_dump: bool,
}

/// RSUs of a run before any epoch: placement and initial indicators, drawn
/// from the config's seed exactly as `run` draws them, with stability
/// scored against this initial population and no faults injected.
pub fn initial_nodes(cfg: &SimConfig) -> Result<Vec<RsuNode>> {
    let seeds = SeedSource::new(cfg.rng_seed);
    let p = cfg.rsu_count;
    let side = cfg.area_side_m();

    let mut rng = seeds.stream("placement");
    let positions: Vec<Position> = match cfg.placement {
        Placement::Uniform => (0..p)
            .map(|_| Position::new(rng.random_range(0.0..=side), rng.random_range(0.0..=side)))
            .collect(),
        Placement::Grid => {
            let k = (p as f64).sqrt().ceil() as usize;
            let step = side / k as f64;
            (0..p)
                .map(|i| Position::new((i % k) as f64 * step + step / 2.0, (i / k) as f64 * step + step / 2.0))
                .collect()
        }
    };

    let init = &cfg.nodes;
    let mut rng = seeds.stream("nodes");
    let lognormal = LogNormal::new(init.compute_log_mean, init.compute_log_sd)
        .map_err(|e| Error::config("nodes.compute_log_sd", e.to_string()))?;
    let draw = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[0] < r[1] { rng.random_range(r[0]..=r[1]) } else { r[0] };
    let mut nodes = Vec::with_capacity(p);
    for (id, &pos) in positions.iter().enumerate() {
        let trust = draw(&mut rng, init.initial_trust);
        let compute_capacity = lognormal.sample(&mut rng).max(1e-9);
        let failure_prob = draw(&mut rng, init.failure_prob);
        let online_time = draw(&mut rng, init.initial_online_s);
        nodes.push(RsuNode::new(
            id,
            pos,
            trust,
            StabilityIndicators {
                online_time,
                compute_capacity,
                failure_prob,
            },
        ));
    }
    let t_zero = nodes.iter().map(|n| n.indicators.online_time).sum::<f64>() / p as f64;
    let params = crate::model::ScoringParams {
        t_zero,
        ..cfg.scoring.clone()
    };
    let pop = PopulationComputeStats::from_capacities(nodes.iter().map(|n| n.indicators.compute_capacity))?;
    for n in &mut nodes {
        let s = stability_score(&n.indicators, &params, &pop)?;
        n.set_stability(s);
    }
    Ok(nodes)
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: MetricsRecord,
    pub epochs: Vec<EpochRow>,
    pub tx_log: Vec<TxLogRow>,
    pub byte_log: Vec<ByteLogRow>,
    pub tree_edges: Vec<TreeEdgeRow>,
    pub dag_dump: Vec<DagDumpRow>,
    /// Vehicle RSU changes observed by the mobility steps.
    pub handoffs: u64,
    /// Shard of every node, one entry per epoch.
    pub assignments: Vec<ShardAssignment>,
}

/// Run one simulation. The result depends only on `config`.
pub fn run(config: &SimConfig) -> Result<RunOutput> {
    run_with(config, &RunOptions::default())
}

pub fn run_with(config: &SimConfig, opts: &RunOptions) -> Result<RunOutput> {
    config.validate()?;
    let mut sim = Sim::new(config.clone(), opts.clone())?;
    sim.execute()?;
    sim.finish()
}

#[derive(Clone, Debug)]
enum Msg {
    Event(Arc<Event>),
    /// Transactions a member hands to every peer in single-leader mode.
    Batch(Arc<Vec<TxId>>),
    Proposal { seq: u64, event: Arc<Event> },
    Cert { seq: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Prepare,
    Commit,
}

#[derive(Debug)]
enum Kind {
    Epoch(usize),
    Mobility,
    Submit { vehicle: usize },
    Tick { node: NodeId },
    Arrive { to: NodeId, from: NodeId, epoch: usize, msg: Msg },
    Validated { node: NodeId, epoch: usize, msg: Msg },
    GossipRound { epoch: usize, origin: NodeId, msg: Msg, plan: Arc<GossipSchedule>, members: Arc<Vec<NodeId>>, round: usize },
    CrossArrive { node: NodeId, txs: Vec<TxId> },
    Vote { shard: ShardId, epoch: usize, seq: u64, phase: Phase, voter: NodeId },
    LeaderTimeout { shard: ShardId, epoch: usize, timer: u64 },
}

struct Item {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Item {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Item {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

#[derive(Clone, Debug)]
struct TxRec {
    tx: Transaction,
    status: TxStatus,
    t_con: Option<f64>,
    /// RSU responsible for getting it ordered next.
    holder: NodeId,
    /// Ordered once in its origin shard.
    origin_done: bool,
    /// Travelling between shards; not in any buffer.
    in_transit: bool,
    /// Inside an unfinished single-leader proposal.
    in_flight: bool,
}

#[derive(Clone, Debug, Default)]
struct NodeState {
    byzantine: bool,
    offline: bool,
    buffer: Vec<TxId>,
    uplink_free: f64,
    cpu_free: f64,
    /// Newest validated event per other creator.
    heard: BTreeMap<NodeId, (f64, EventHash)>,
    /// Creators heard from since this member last referenced them.
    fresh: BTreeSet<NodeId>,
    /// Own event count when each creator was last referenced.
    last_ref: BTreeMap<NodeId, u64>,
    made: u64,
    phase: f64,
    forked: bool,
    ok: u64,
    failed: u64,
    turnaround_sum: f64,
    turnaround_n: u64,
    bytes: u64,
    role: Option<Role>,
    /// Transactions known to this member in single-leader mode.
    pool: BTreeSet<TxId>,
    /// Messages already received this epoch (gossip duplicates).
    seen: BTreeSet<(u8, [u8; 32])>,
}

#[derive(Clone, Debug, Default)]
struct Round {
    seq: u64,
    event: Option<Arc<Event>>,
    phase: Option<Phase>,
    votes: BTreeSet<NodeId>,
}

#[derive(Clone, Debug, Default)]
struct LeaderState {
    order: Vec<NodeId>,
    next: usize,
    round: Round,
    timer: u64,
}

impl LeaderState {
    fn leader(&self) -> Option<NodeId> {
        (!self.order.is_empty()).then(|| self.order[self.next % self.order.len()])
    }
}

struct Sim {
    cfg: SimConfig,
    opts: RunOptions,
    seeds: SeedSource,
    rng_mobility: ChaCha8Rng,
    rng_traffic: ChaCha8Rng,
    rng_faults: ChaCha8Rng,
    rng_gossip: ChaCha8Rng,
    nodes: Vec<RsuNode>,
    positions: Vec<Position>,
    median_compute: f64,
    state: Vec<NodeState>,
    mobility: Mobility,
    arrivals: ArrivalProcess,
    txs: Vec<TxRec>,
    queue: BinaryHeap<Reverse<Item>>,
    seq: u64,
    now: f64,
    epoch: usize,
    assignment: Option<ShardAssignment>,
    bandwidth: Vec<f64>,
    trees: Vec<Option<BroadcastTree>>,
    adjacency: Vec<Vec<NodeId>>,
    views: Vec<Option<DagView>>,
    /// Uncommitted transaction-carrying events of honest creators per view.
    open_events: Vec<usize>,
    routes: Vec<Vec<Option<CrossLink>>>,
    leaders: Vec<LeaderState>,
    required: [f64; 3],
    epoch_rows: Vec<EpochRow>,
    history: Vec<ShardAssignment>,
    byte_log: Vec<ByteLogRow>,
    tree_edges: Vec<TreeEdgeRow>,
    dag_dump: Vec<DagDumpRow>,
    handoffs: u64,
    epoch_committed: u64,
    epoch_cross_committed: u64,
}

fn tree_mode(cfg: &SimConfig) -> bool {
    cfg.ablation != Ablation::NoSmlbt
}

fn dag_mode(cfg: &SimConfig) -> bool {
    cfg.ablation != Ablation::NoDag
}

fn msg_key(msg: &Msg) -> (u8, [u8; 32]) {
    match msg {
        Msg::Event(e) => (0, e.hash().0),
        Msg::Batch(b) => {
            let mut k = [0u8; 32];
            k[..8].copy_from_slice(&b.first().copied().unwrap_or(u64::MAX).to_le_bytes());
            k[8..16].copy_from_slice(&(b.len() as u64).to_le_bytes());
            (1, k)
        }
        Msg::Proposal { event, .. } => (2, event.hash().0),
        Msg::Cert { seq } => {
            let mut k = [0u8; 32];
            k[..8].copy_from_slice(&seq.to_le_bytes());
            (3, k)
        }
    }
}

impl Sim {
    fn new(cfg: SimConfig, opts: RunOptions) -> Result<Self> {
        let seeds = SeedSource::new(cfg.rng_seed);
        let p = cfg.rsu_count;
        let side = cfg.area_side_m();

        let nodes = initial_nodes(&cfg)?;
        let positions: Vec<Position> = nodes.iter().map(|n| n.position).collect();
        let mut caps: Vec<f64> = nodes.iter().map(|n| n.indicators.compute_capacity).collect();
        caps.sort_by(f64::total_cmp);
        let median_compute = if p % 2 == 1 { caps[p / 2] } else { (caps[p / 2 - 1] + caps[p / 2]) / 2.0 };

        let mut rng_mobility = seeds.stream("mobility");
        let mobility = Mobility::new(cfg.vehicle_count, side, cfg.vehicle_speed_kmh, positions.clone(), &mut rng_mobility);
        let mut rng_traffic = seeds.stream("traffic");
        let arrivals = ArrivalProcess::new(cfg.request_rate_tps, cfg.vehicle_count, 0.0, &mut rng_traffic);

        let mut rng = seeds.stream("phases");
        let state = (0..p)
            .map(|_| NodeState {
                phase: rng.random_range(0.0..cfg.event_interval_s),
                ..NodeState::default()
            })
            .collect();

        let q = cfg.shard_count;
        Ok(Self {
            rng_faults: seeds.stream("faults"),
            rng_gossip: seeds.stream("gossip"),
            seeds,
            rng_mobility,
            rng_traffic,
            nodes,
            positions,
            median_compute,
            state,
            mobility,
            arrivals,
            txs: Vec::new(),
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            epoch: 0,
            assignment: None,
            bandwidth: vec![0.0; p],
            trees: vec![None; q],
            adjacency: vec![Vec::new(); p],
            views: (0..q).map(|_| None).collect(),
            open_events: vec![0; q],
            routes: vec![vec![None; q]; q],
            leaders: vec![LeaderState::default(); q],
            required: [cfg.scoring.initial_required_s; 3],
            epoch_rows: Vec::new(),
            history: Vec::new(),
            byte_log: Vec::new(),
            tree_edges: Vec::new(),
            dag_dump: Vec::new(),
            handoffs: 0,
            epoch_committed: 0,
            epoch_cross_committed: 0,
            cfg,
            opts,
        })
    }

    fn push(&mut self, time: f64, kind: Kind) {
        self.seq += 1;
        self.queue.push(Reverse(Item {
            time,
            seq: self.seq,
            kind,
        }));
    }

    fn end_time(&self) -> f64 {
        self.cfg.duration_s + self.cfg.drain_s
    }

    fn execute(&mut self) -> Result<()> {
        self.push(0.0, Kind::Epoch(0));
        self.push(0.0, Kind::Mobility);
        for n in 0..self.nodes.len() {
            let t = self.state[n].phase;
            self.push(t, Kind::Tick { node: n });
        }
        let end = self.end_time();
        while let Some(Reverse(item)) = self.queue.pop() {
            if item.time > end {
                break;
            }
            self.now = item.time;
            self.handle(item.kind)?;
        }
        self.now = end;
        Ok(())
    }

    fn handle(&mut self, kind: Kind) -> Result<()> {
        match kind {
            Kind::Epoch(k) => self.start_epoch(k),
            Kind::Mobility => {
                self.on_mobility();
                Ok(())
            }
            Kind::Submit { vehicle } => self.on_submit(vehicle),
            Kind::Tick { node } => self.on_tick(node),
            Kind::Arrive { to, from, epoch, msg } => self.on_arrive(to, from, epoch, msg),
            Kind::Validated { node, epoch, msg } => self.on_validated(node, epoch, msg),
            Kind::GossipRound {
                epoch,
                origin,
                msg,
                plan,
                members,
                round,
            } => {
                self.on_gossip_round(epoch, origin, msg, plan, members, round);
                Ok(())
            }
            Kind::CrossArrive { node, txs } => {
                self.on_cross_arrive(node, txs);
                Ok(())
            }
            Kind::Vote {
                shard,
                epoch,
                seq,
                phase,
                voter,
            } => self.on_vote(shard, epoch, seq, phase, voter),
            Kind::LeaderTimeout { shard, epoch, timer } => {
                self.on_leader_timeout(shard, epoch, timer);
                Ok(())
            }
        }
    }

    fn silent(&self, n: NodeId) -> bool {
        self.state[n].byzantine && self.cfg.byzantine_policy == ByzantinePolicy::Silent
    }

    fn active(&self, n: NodeId) -> bool {
        !self.state[n].offline && !self.silent(n)
    }

    fn shard_of(&self, n: NodeId) -> ShardId {
        self.assignment.as_ref().map_or(0, |a| a.shard_of(n))
    }

    // ---- traffic and mobility ----

    fn on_mobility(&mut self) {
        let t = self.now;
        if t >= self.cfg.duration_s {
            return;
        }
        if t > 0.0 {
            self.handoffs += self.mobility.step(MOBILITY_DT, &mut self.rng_mobility) as u64;
        }
        let until = (t + MOBILITY_DT).min(self.cfg.duration_s);
        for a in self.arrivals.take_until(until, &mut self.rng_traffic) {
            self.push(a.time, Kind::Submit { vehicle: a.vehicle });
        }
        self.push(t + MOBILITY_DT, Kind::Mobility);
    }

    fn on_submit(&mut self, vehicle: usize) -> Result<()> {
        let pos = self.mobility.vehicles()[vehicle].position;
        let Some(rsu) = super::nearest_rsu(pos, &self.positions, |i| !self.state[i].offline) else {
            return Ok(());
        };
        let shard = self.shard_of(rsu);
        let last = self.mobility.vehicles()[vehicle].last_tx_rsu;
        let cross = last.is_some_and(|r| self.shard_of(r) != shard);
        self.mobility.vehicle_mut(vehicle).last_tx_rsu = Some(rsu);
        let id = self.txs.len() as TxId;
        let tx = Transaction {
            id,
            vehicle,
            origin_rsu: rsu,
            origin_shard: shard,
            submit_time: self.now,
            kind: if cross { TxKind::CrossShard } else { TxKind::Normal },
            conflict_key: None,
            counterpart_rsu: if cross { last } else { None },
        };
        let mut rec = TxRec {
            tx,
            status: TxStatus::Pending,
            t_con: None,
            holder: rsu,
            origin_done: false,
            in_transit: false,
            in_flight: false,
        };
        if self.silent(rsu) {
            rec.status = TxStatus::Rejected;
            self.state[rsu].failed += 1;
            self.txs.push(rec);
            return Ok(());
        }
        self.txs.push(rec);
        self.state[rsu].buffer.push(id);
        if dag_mode(&self.cfg) && self.state[rsu].buffer.len() >= self.cfg.max_txs_per_event {
            self.create_dag_event(rsu)?;
        }
        Ok(())
    }

    // ---- links ----

    /// Queue `bits` on `from`'s uplink and return the arrival time at `to`.
    fn transmit(&mut self, from: NodeId, to: NodeId, bits: f64, issue: f64) -> f64 {
        let rate = self.bandwidth[from].min(self.bandwidth[to]);
        let st = &mut self.state[from];
        let start = issue.max(st.uplink_free);
        let finish = start + bits / 1e6 / rate;
        st.uplink_free = finish;
        st.bytes += (bits / 8.0).ceil() as u64;
        finish + euclidean_distance(self.positions[from], self.positions[to]) / self.cfg.link.propagation_speed
    }

    fn msg_bits(&self, msg: &Msg) -> f64 {
        let l = &self.cfg.link;
        match msg {
            Msg::Event(e) | Msg::Proposal { event: e, .. } => e.size_bits(l.event_header_bits, l.tx_bits),
            Msg::Batch(b) => l.event_header_bits + l.tx_bits * b.len() as f64,
            Msg::Cert { .. } => l.event_header_bits,
        }
    }

    fn relay_delay(&self, n: NodeId) -> f64 {
        if self.state[n].byzantine && self.cfg.byzantine_policy == ByzantinePolicy::DelayRelay {
            self.cfg.byzantine_delay_s
        } else {
            0.0
        }
    }

    /// Start disseminating `msg` from `origin` to its shard.
    fn disseminate(&mut self, origin: NodeId, msg: Msg) {
        self.state[origin].seen.insert(msg_key(&msg));
        if tree_mode(&self.cfg) {
            self.relay(origin, None, msg);
            return;
        }
        let shard = self.shard_of(origin);
        let Some(tree) = &self.trees[shard] else {
            return;
        };
        let members: Vec<NodeId> = tree.members().to_vec();
        let informed: Vec<bool> = members.iter().map(|&m| m == origin).collect();
        let relays = vec![true; members.len()];
        let plan = gossip_dissemination(&informed, &relays, self.cfg.gossip_fanout, self.cfg.gossip_round_cap, &mut self.rng_gossip);
        if plan.rounds.is_empty() {
            return;
        }
        self.push(
            self.now,
            Kind::GossipRound {
                epoch: self.epoch,
                origin,
                msg,
                plan: Arc::new(plan),
                members: Arc::new(members),
                round: 0,
            },
        );
    }

    fn relay(&mut self, at: NodeId, from: Option<NodeId>, msg: Msg) {
        let issue = self.now + self.relay_delay(at);
        let bits = self.msg_bits(&msg);
        let nbrs = self.adjacency[at].clone();
        for nb in nbrs {
            if Some(nb) == from {
                continue;
            }
            let t = self.transmit(at, nb, bits, issue);
            self.push(
                t,
                Kind::Arrive {
                    to: nb,
                    from: at,
                    epoch: self.epoch,
                    msg: msg.clone(),
                },
            );
        }
    }

    fn on_gossip_round(
        &mut self,
        epoch: usize,
        origin: NodeId,
        msg: Msg,
        plan: Arc<GossipSchedule>,
        members: Arc<Vec<NodeId>>,
        round: usize,
    ) {
        if epoch != self.epoch {
            return;
        }
        let bits = self.msg_bits(&msg);
        let mut first: Vec<Option<f64>> = vec![None; members.len()];
        let mut round_end = self.now;
        for &(a, b) in &plan.rounds[round] {
            let (from, to) = (members[a], members[b]);
            if self.state[from].offline {
                continue;
            }
            let issue = self.now + self.relay_delay(from);
            let t = self.transmit(from, to, bits, issue);
            round_end = round_end.max(t);
            if plan.informed_after[b] == Some(round + 1) && members[b] != origin {
                first[b] = Some(first[b].map_or(t, |x: f64| x.min(t)));
            }
        }
        for (b, t) in first.into_iter().enumerate() {
            if let Some(t) = t {
                self.push(
                    t,
                    Kind::Arrive {
                        to: members[b],
                        from: origin,
                        epoch,
                        msg: msg.clone(),
                    },
                );
            }
        }
        if round + 1 < plan.rounds.len() {
            self.push(
                round_end,
                Kind::GossipRound {
                    epoch,
                    origin,
                    msg,
                    plan,
                    members,
                    round: round + 1,
                },
            );
        }
    }

    fn on_arrive(&mut self, to: NodeId, from: NodeId, epoch: usize, msg: Msg) -> Result<()> {
        // Silent members withhold their own events and votes but the
        // forwarding layer keeps working; relay misbehaviour is the
        // delay-relay policy's job.
        if epoch == self.epoch && self.silent(to) && !self.state[to].offline && tree_mode(&self.cfg) {
            if self.state[to].seen.insert(msg_key(&msg)) {
                self.relay(to, Some(from), msg);
            }
            return Ok(());
        }
        if epoch != self.epoch || !self.active(to) {
            return Ok(());
        }
        if !self.state[to].seen.insert(msg_key(&msg)) {
            return Ok(());
        }
        if tree_mode(&self.cfg) {
            self.relay(to, Some(from), msg.clone());
        }
        match msg {
            Msg::Event(_) | Msg::Proposal { .. } => {
                let ntx = match &msg {
                    Msg::Event(e) | Msg::Proposal { event: e, .. } => e.txs().len(),
                    _ => 0,
                };
                let n = &self.cfg.nodes;
                let scale = self.median_compute / self.nodes[to].indicators.compute_capacity;
                let cost = n.event_validation_s + ntx as f64 * n.tx_validation_s * scale;
                let st = &mut self.state[to];
                let done = self.now.max(st.cpu_free) + cost;
                st.cpu_free = done;
                st.turnaround_sum += done - self.now;
                st.turnaround_n += 1;
                self.push(done, Kind::Validated { node: to, epoch, msg });
            }
            Msg::Batch(b) => {
                let st = &mut self.state[to];
                st.pool.extend(b.iter().copied());
            }
            Msg::Cert { seq } => self.send_vote(to, seq, Phase::Commit),
        }
        Ok(())
    }

    fn on_validated(&mut self, node: NodeId, epoch: usize, msg: Msg) -> Result<()> {
        if epoch != self.epoch || !self.active(node) {
            return Ok(());
        }
        match msg {
            Msg::Event(e) => {
                let key = (e.timestamp(), e.hash());
                let creator = e.creator();
                let st = &mut self.state[node];
                if creator != node {
                    let slot = st.heard.entry(creator).or_insert(key);
                    if key.0 > slot.0 || (key.0 == slot.0 && key.1 > slot.1) {
                        *slot = key;
                    }
                    st.fresh.insert(creator);
                }
            }
            Msg::Proposal { seq, .. } => self.send_vote(node, seq, Phase::Prepare),
            _ => {}
        }
        Ok(())
    }

    // ---- DAG consensus ----

    fn on_tick(&mut self, node: NodeId) -> Result<()> {
        let next = self.now + self.cfg.event_interval_s;
        if next <= self.end_time() {
            self.push(next, Kind::Tick { node });
        }
        if !self.active(node) || self.assignment.is_none() {
            return Ok(());
        }
        if dag_mode(&self.cfg) {
            let shard = self.shard_of(node);
            let wanted = !self.state[node].buffer.is_empty() || (!self.state[node].fresh.is_empty() && self.open_events[shard] > 0);
            if wanted {
                self.create_dag_event(node)?;
            }
            Ok(())
        } else {
            self.leader_tick(node)
        }
    }

    fn create_dag_event(&mut self, node: NodeId) -> Result<()> {
        let shard = self.shard_of(node);
        if self.views[shard].is_none() || !self.active(node) {
            return Ok(());
        }
        let ids = std::mem::take(&mut self.state[node].buffer);
        let txs: Vec<Transaction> = ids.iter().map(|&i| self.txs[i as usize].tx.clone()).collect();
        let other = self.pick_other_parent(node);
        let now = self.now;
        let equivocator = self.state[node].byzantine
            && self.cfg.byzantine_policy == ByzantinePolicy::Equivocate
            && !self.state[node].forked;
        let view = self.views[shard].as_mut().expect("checked above");
        let evs = create_event(view, node, other, txs.clone(), now)?;
        let mut fork = None;
        if equivocator {
            fork = Some(fork_event(view, node, txs, now)?);
        }
        for e in &evs {
            if !e.txs().is_empty() {
                self.open_events[shard] += 1;
            }
        }
        if let Some(f) = fork {
            self.state[node].forked = true;
            self.recount_open(shard);
            self.disseminate(node, Msg::Event(f));
        }
        for e in evs {
            self.disseminate(node, Msg::Event(e));
        }
        self.commit_pass(shard)
    }

    /// Rotates through creators with unreferenced news, the longest
    /// neglected first, so distant members are not starved by close ones.
    fn pick_other_parent(&mut self, node: NodeId) -> Option<EventHash> {
        let st = &mut self.state[node];
        let pool: Vec<NodeId> = if st.fresh.is_empty() {
            st.heard.keys().copied().collect()
        } else {
            st.fresh.iter().copied().collect()
        };
        let c = pool.into_iter().min_by_key(|c| (st.last_ref.get(c).copied().unwrap_or(0), *c))?;
        st.made += 1;
        st.last_ref.insert(c, st.made);
        st.fresh.remove(&c);
        st.heard.get(&c).map(|k| k.1)
    }

    fn recount_open(&mut self, shard: ShardId) {
        if let Some(v) = &self.views[shard] {
            self.open_events[shard] = v
                .events()
                .iter()
                .filter(|e| !e.txs().is_empty() && !v.is_equivocating(e.creator()) && !v.is_committed(e.hash()))
                .count();
        }
    }

    fn commit_pass(&mut self, shard: ShardId) -> Result<()> {
        let now = self.now;
        let committed = match self.views[shard].as_mut() {
            Some(v) => v.commit_pass(now),
            None => return Ok(()),
        };
        let mut outgoing: Vec<TxId> = Vec::new();
        for c in committed {
            if !c.event.txs().is_empty() {
                self.open_events[shard] = self.open_events[shard].saturating_sub(1);
            }
            let creator = c.event.creator();
            for t in c.event.txs() {
                self.state[creator].ok += 1;
                if let Some(id) = self.on_tx_ordered(t.id, shard) {
                    outgoing.push(id);
                }
            }
        }
        self.send_cross(shard, outgoing);
        Ok(())
    }

    /// A shard ordered `id`. Returns it when it still has to visit the
    /// counterpart's shard.
    fn on_tx_ordered(&mut self, id: TxId, shard: ShardId) -> Option<TxId> {
        let counterpart_shard = self.txs[id as usize].tx.counterpart_rsu.map(|r| self.shard_of(r));
        let rec = &mut self.txs[id as usize];
        if rec.status != TxStatus::Pending || rec.in_transit {
            return None;
        }
        rec.origin_done = true;
        match counterpart_shard {
            Some(s) if s != shard && rec.tx.kind == TxKind::CrossShard => {
                rec.in_transit = true;
                Some(id)
            }
            _ => {
                rec.status = TxStatus::Committed;
                rec.t_con = Some(self.now);
                self.epoch_committed += 1;
                if rec.tx.kind == TxKind::CrossShard {
                    self.epoch_cross_committed += 1;
                }
                None
            }
        }
    }

    /// Carry ordered cross-shard transactions towards their counterpart
    /// shards over the root cross-links.
    fn send_cross(&mut self, shard: ShardId, ids: Vec<TxId>) {
        if ids.is_empty() {
            return;
        }
        let Some(from) = self.trees[shard].as_ref().map(BroadcastTree::root) else {
            return;
        };
        let mut by_target: std::collections::BTreeMap<ShardId, Vec<TxId>> = Default::default();
        for id in ids {
            let r = self.txs[id as usize].tx.counterpart_rsu.expect("cross-shard txs carry a counterpart");
            by_target.entry(self.shard_of(r)).or_default().push(id);
        }
        for (target, txs) in by_target {
            self.forward_cross(from, shard, target, txs);
        }
    }

    fn forward_cross(&mut self, from: NodeId, shard: ShardId, target: ShardId, txs: Vec<TxId>) {
        let to = match &self.routes[shard][target] {
            Some(link) => link.to,
            None => match &self.trees[target] {
                Some(t) => t.root(),
                None => {
                    // The counterpart shard has no online member this epoch;
                    // settle for the sending holder and retry next epoch.
                    for &id in &txs {
                        let r = &mut self.txs[id as usize];
                        r.in_transit = false;
                        r.holder = from;
                    }
                    return;
                }
            },
        };
        let bits = self.cfg.link.event_header_bits + self.cfg.link.tx_bits * txs.len() as f64;
        let t = self.transmit(from, to, bits, self.now);
        self.push(t, Kind::CrossArrive { node: to, txs });
    }

    fn on_cross_arrive(&mut self, node: NodeId, txs: Vec<TxId>) {
        let here = self.shard_of(node);
        let mut onward: std::collections::BTreeMap<ShardId, Vec<TxId>> = Default::default();
        for id in txs {
            let target = self.txs[id as usize].tx.counterpart_rsu.map(|r| self.shard_of(r)).unwrap_or(here);
            let rec = &mut self.txs[id as usize];
            if rec.status != TxStatus::Pending {
                continue;
            }
            if self.state[node].byzantine && self.cfg.byzantine_policy == ByzantinePolicy::Silent {
                rec.status = TxStatus::Rejected;
                rec.in_transit = false;
                self.state[node].failed += 1;
                continue;
            }
            if target != here && !self.state[node].offline {
                onward.entry(target).or_default().push(id);
                continue;
            }
            rec.in_transit = false;
            rec.holder = node;
            self.state[node].buffer.push(id);
        }
        for (target, ids) in onward {
            self.forward_cross(node, here, target, ids);
        }
    }

    // ---- single-leader consensus ----

    fn leader_tick(&mut self, node: NodeId) -> Result<()> {
        let shard = self.shard_of(node);
        if self.trees[shard].is_none() {
            return Ok(());
        }
        if !self.state[node].buffer.is_empty() {
            let ids = std::mem::take(&mut self.state[node].buffer);
            self.state[node].pool.extend(ids.iter().copied());
            self.disseminate(node, Msg::Batch(Arc::new(ids)));
        }
        let ls = &self.leaders[shard];
        if ls.leader() != Some(node) || ls.round.event.is_some() {
            return Ok(());
        }
        if self.state[node].byzantine && self.cfg.byzantine_policy == ByzantinePolicy::Equivocate {
            // Honest members reject its proposals; only the timeout helps.
            return Ok(());
        }
        let cap = self.cfg.max_txs_per_event;
        let mut picked = Vec::new();
        let mut stale = Vec::new();
        for &id in &self.state[node].pool {
            let r = &self.txs[id as usize];
            if r.status != TxStatus::Pending || r.in_transit {
                stale.push(id);
            } else if !r.in_flight {
                picked.push(id);
                if picked.len() == cap {
                    break;
                }
            }
        }
        for id in stale {
            self.state[node].pool.remove(&id);
        }
        if picked.is_empty() {
            return Ok(());
        }
        let txs: Vec<Transaction> = picked.iter().map(|&i| self.txs[i as usize].tx.clone()).collect();
        for &i in &picked {
            self.txs[i as usize].in_flight = true;
        }
        let event = Arc::new(Event::new(node, None, None, self.now, txs));
        let ls = &mut self.leaders[shard];
        let seq = ls.round.seq;
        ls.round.event = Some(event.clone());
        ls.round.phase = Some(Phase::Prepare);
        ls.round.votes = BTreeSet::from([node]);
        self.arm_timeout(shard);
        self.disseminate(node, Msg::Proposal { seq, event });
        self.check_quorum(shard)
    }

    fn send_vote(&mut self, voter: NodeId, seq: u64, phase: Phase) {
        if self.state[voter].byzantine && self.cfg.byzantine_policy == ByzantinePolicy::VoteNo {
            return;
        }
        let shard = self.shard_of(voter);
        let Some(leader) = self.leaders[shard].leader() else {
            return;
        };
        if leader == voter {
            return;
        }
        let t = self.transmit(voter, leader, self.cfg.link.event_header_bits, self.now);
        self.push(
            t,
            Kind::Vote {
                shard,
                epoch: self.epoch,
                seq,
                phase,
                voter,
            },
        );
    }

    fn on_vote(&mut self, shard: ShardId, epoch: usize, seq: u64, phase: Phase, voter: NodeId) -> Result<()> {
        if epoch != self.epoch {
            return Ok(());
        }
        let r = &mut self.leaders[shard].round;
        if r.seq != seq || r.phase != Some(phase) {
            return Ok(());
        }
        r.votes.insert(voter);
        self.check_quorum(shard)
    }

    fn check_quorum(&mut self, shard: ShardId) -> Result<()> {
        let u = self.leaders[shard].order.len();
        let r = &self.leaders[shard].round;
        if 3 * r.votes.len() <= 2 * u {
            return Ok(());
        }
        let leader = self.leaders[shard].leader().expect("a round has a leader");
        let seq = r.seq;
        match r.phase {
            Some(Phase::Prepare) => {
                let r = &mut self.leaders[shard].round;
                r.phase = Some(Phase::Commit);
                r.votes = BTreeSet::from([leader]);
                self.disseminate(leader, Msg::Cert { seq });
                self.check_quorum(shard)
            }
            Some(Phase::Commit) => {
                let event = self.leaders[shard].round.event.take().expect("committing round has a proposal");
                let mut outgoing = Vec::new();
                for t in event.txs() {
                    self.txs[t.id as usize].in_flight = false;
                    self.state[leader].ok += 1;
                    if let Some(id) = self.on_tx_ordered(t.id, shard) {
                        outgoing.push(id);
                    }
                }
                self.send_cross(shard, outgoing);
                self.rotate(shard);
                Ok(())
            }
            None => Ok(()),
        }
    }

    fn rotate(&mut self, shard: ShardId) {
        let ls = &mut self.leaders[shard];
        if let Some(e) = ls.round.event.take() {
            for t in e.txs() {
                self.txs[t.id as usize].in_flight = false;
            }
            if let Some(l) = ls.leader() {
                self.state[l].failed += e.txs().len() as u64;
            }
        }
        ls.next += 1;
        ls.round = Round {
            seq: ls.round.seq + 1,
            ..Round::default()
        };
        self.arm_timeout(shard);
    }

    fn arm_timeout(&mut self, shard: ShardId) {
        let ls = &mut self.leaders[shard];
        ls.timer += 1;
        let timer = ls.timer;
        let t = self.now + self.cfg.leader_timeout_s;
        self.push(
            t,
            Kind::LeaderTimeout {
                shard,
                epoch: self.epoch,
                timer,
            },
        );
    }

    fn on_leader_timeout(&mut self, shard: ShardId, epoch: usize, timer: u64) {
        if epoch != self.epoch || self.leaders[shard].timer != timer {
            return;
        }
        let pending = self.leaders[shard].round.event.is_some()
            || self.leaders[shard].order.iter().any(|&m| !self.state[m].pool.is_empty());
        if pending {
            self.rotate(shard);
        } else {
            self.arm_timeout(shard);
        }
    }

    // ---- epochs ----

    fn close_epoch(&mut self) {
        let p = self.nodes.len();
        // Transactions of events that never committed count against their
        // creators.
        for v in self.views.iter().flatten() {
            let mut seen = BTreeSet::new();
            for (creator, t) in v.uncommitted() {
                if seen.insert(t.id) && self.txs[t.id as usize].status == TxStatus::Pending {
                    self.state[creator].failed += 1;
                }
            }
        }
        for ls in &mut self.leaders {
            if let Some(e) = ls.round.event.take() {
                if let Some(l) = ls.leader() {
                    self.state[l].failed += e.txs().len() as u64;
                }
            }
        }
        for n in 0..p {
            let bytes = std::mem::take(&mut self.state[n].bytes);
            self.byte_log.push(ByteLogRow {
                epoch: self.epoch,
                node: n,
                bytes_sent: bytes,
            });
        }
        if let Some(row) = self.epoch_rows.last_mut() {
            row.committed = self.epoch_committed;
            row.cross_shard_committed = self.epoch_cross_committed;
        }
        self.epoch_committed = 0;
        self.epoch_cross_committed = 0;
        if self.opts.dag_dump {
            for v in self.views.iter().flatten() {
                self.dag_dump.extend(v.dump_rows());
            }
        }
    }

    fn rescore(&mut self, k: usize) -> Result<()> {
        let p = self.nodes.len();
        if k > 0 {
            // Trust from the epoch just closed.
            let mut sums = [0.0; 3];
            let mut counts = [0usize; 3];
            let times: Vec<Option<(Role, f64)>> = (0..p)
                .map(|n| {
                    let st = &self.state[n];
                    let role = st.role?;
                    let t = if self.silent(n) {
                        self.cfg.epoch_seconds
                    } else if st.turnaround_n > 0 {
                        st.turnaround_sum / st.turnaround_n as f64
                    } else {
                        0.0
                    };
                    Some((role, t))
                })
                .collect();
            for (role, t) in times.iter().flatten() {
                if !t.is_nan() {
                    sums[role.index()] += t;
                    counts[role.index()] += 1;
                }
            }
            for n in 0..p {
                let st = &self.state[n];
                let mut stats = EpochNodeStats {
                    ok_txs: st.ok,
                    failed_txs: st.failed,
                    role_times: [0.0; 3],
                    role_required: self.required,
                };
                if let Some((role, t)) = times[n] {
                    stats.role_times[role.index()] = t;
                }
                let delta = trust_delta(&stats, &self.cfg.scoring);
                let trust = apply_trust(self.nodes[n].trust(), delta);
                self.nodes[n].set_trust(trust);
            }
            for r in 0..3 {
                if counts[r] > 0 && sums[r] > 0.0 {
                    self.required[r] = sums[r] / counts[r] as f64;
                }
            }
        }
        for st in &mut self.state {
            st.ok = 0;
            st.failed = 0;
            st.turnaround_sum = 0.0;
            st.turnaround_n = 0;
        }

        let prev = (k > 0).then(|| self.state.iter().map(|s| s.byzantine).collect::<Vec<_>>());
        let draw = super::inject_faults(p, self.cfg.byzantine_rate, self.cfg.offline_rate, prev.as_deref(), &mut self.rng_faults);
        for n in 0..p {
            self.state[n].byzantine = draw.byzantine[n];
            self.state[n].offline = draw.offline[n];
            self.nodes[n].is_byzantine = draw.byzantine[n];
            self.nodes[n].is_offline = draw.offline[n];
            let ind = &mut self.nodes[n].indicators;
            if draw.offline[n] {
                ind.online_time = 0.0;
            } else if k > 0 {
                ind.online_time += self.cfg.epoch_seconds;
            }
        }

        let t_zero = self.nodes.iter().map(|n| n.indicators.online_time).sum::<f64>() / p as f64;
        let params = crate::model::ScoringParams {
            t_zero,
            ..self.cfg.scoring.clone()
        };
        let pop = PopulationComputeStats::from_capacities(self.nodes.iter().map(|n| n.indicators.compute_capacity))?;
        for n in 0..p {
            let s = stability_score(&self.nodes[n].indicators, &params, &pop)?;
            self.nodes[n].set_stability(s);
        }
        Ok(())
    }

    fn start_epoch(&mut self, k: usize) -> Result<()> {
        if k > 0 {
            self.close_epoch();
        }
        self.epoch = k;
        self.rescore(k)?;
        let p = self.nodes.len();
        let q = self.cfg.shard_count;
        let stability: Vec<f64> = self.nodes.iter().map(RsuNode::stability).collect();

        let (assignment, fit) = if self.cfg.ablation == Ablation::NoSharding {
            let mut rng = self.seeds.indexed("random_sharding", k as u64);
            let mut a = ShardAssignment::random(p, q, &mut rng);
            a.repair(&stability);
            let f = fitness(&a, &self.nodes, &self.cfg.thresholds)?;
            (a, f)
        } else {
            let mut rng = self.seeds.indexed("gsa", k as u64);
            let params = GsaParams::from_config(&self.cfg.gsa, &self.nodes);
            let seeds: Vec<ShardAssignment> = self.assignment.iter().cloned().collect();
            let out = run_optimizer(&self.nodes, q, &params, &self.cfg.thresholds, Variant::Gsa, &seeds, &mut rng)?;
            (out.assignment, out.fitness)
        };
        self.assignment = Some(assignment.clone());

        let mut rng = self.seeds.indexed("links", k as u64);
        let [lo, hi] = self.cfg.link.bandwidth_mbps;
        self.bandwidth = (0..p).map(|_| if lo < hi { rng.random_range(lo..=hi) } else { lo }).collect();
        let l = &self.cfg.link;
        let full_event = l.event_header_bits + l.tx_bits * self.cfg.max_txs_per_event as f64;
        let graph = LatencyGraph::from_positions(&self.positions, &self.bandwidth, full_event, l.propagation_speed)?;

        let members = assignment.members();
        let mut built: Vec<(ShardId, BroadcastTree)> = Vec::new();
        for (s, m) in members.iter().enumerate() {
            let online: Vec<NodeId> = m.iter().copied().filter(|&n| !self.state[n].offline).collect();
            if online.is_empty() {
                continue;
            }
            built.push((s, build_tree(&online, &graph, self.cfg.fanout, &stability)?));
        }
        let mut trees: Vec<BroadcastTree> = built.iter().map(|(_, t)| t.clone()).collect();
        let mut rng = self.seeds.indexed("cross_links", k as u64);
        cross_shard_links(&mut trees, &graph, self.cfg.fanout, self.cfg.cross_link_target, &mut rng);
        let shard_ids: Vec<ShardId> = built.iter().map(|(s, _)| *s).collect();
        self.trees = vec![None; q];
        for (i, t) in trees.into_iter().enumerate() {
            self.trees[shard_ids[i]] = Some(t);
        }
        self.build_routes(&shard_ids);

        self.adjacency = vec![Vec::new(); p];
        for t in self.trees.iter().flatten() {
            for (a, b, _) in t.edges() {
                self.adjacency[a].push(b);
                self.adjacency[b].push(a);
            }
            for &m in t.members() {
                self.state[m].role = Some(if m == t.root() {
                    Role::Root
                } else if t.children(m)?.is_empty() {
                    Role::Child
                } else {
                    Role::Father
                });
            }
        }
        for n in 0..p {
            if self.state[n].offline {
                self.state[n].role = None;
            }
            let st = &mut self.state[n];
            st.heard.clear();
            st.fresh.clear();
            st.last_ref.clear();
            st.made = 0;
            st.forked = false;
            st.seen.clear();
            st.pool.clear();
            st.buffer.clear();
        }
        if self.opts.tree_edges {
            for (s, t) in self.trees.iter().enumerate() {
                if let Some(t) = t {
                    self.tree_edges.extend(tree_edge_rows(k, s, t));
                }
            }
        }

        // Views and leader rotations over online members.
        self.views = (0..q).map(|_| None).collect();
        self.open_events = vec![0; q];
        for s in 0..q {
            let Some(t) = &self.trees[s] else {
                self.leaders[s] = LeaderState::default();
                continue;
            };
            let online = t.members().to_vec();
            let mut v = DagView::new(&online, k, self.cfg.max_txs_per_event)?;
            if self.cfg.byzantine_policy == ByzantinePolicy::VoteNo {
                for &m in &online {
                    if self.state[m].byzantine {
                        v.set_vote(m, Vote::AlwaysNo)?;
                    }
                }
            }
            self.views[s] = Some(v);
            let seq = self.leaders[s].round.seq + 1;
            self.leaders[s] = LeaderState {
                order: online,
                next: k,
                round: Round {
                    seq,
                    ..Round::default()
                },
                timer: self.leaders[s].timer,
            };
            if !dag_mode(&self.cfg) {
                self.arm_timeout(s);
            }
        }

        // Every live transaction returns to its holder, or to the nearest
        // live member of the holder's shard when the holder dropped out.
        for i in 0..self.txs.len() {
            self.txs[i].in_flight = false;
            if self.txs[i].status != TxStatus::Pending || self.txs[i].in_transit {
                continue;
            }
            let h = self.txs[i].holder;
            if !self.active(h) {
                let shard = self.shard_of(h);
                if let Some(n) = super::nearest_rsu(self.positions[h], &self.positions, |n| self.active(n) && self.shard_of(n) == shard) {
                    self.txs[i].holder = n;
                }
            }
            let h = self.txs[i].holder;
            self.state[h].buffer.push(i as TxId);
        }

        let sizes = assignment.sizes();
        let online = self.state.iter().filter(|s| !s.offline).count();
        self.history.push(assignment.clone());
        self.epoch_rows.push(EpochRow {
            epoch: k,
            start_s: self.now,
            online,
            byzantine: self.state.iter().filter(|s| s.byzantine).count(),
            fitness: fit,
            min_shard_size: sizes.iter().copied().min().unwrap_or(0),
            max_shard_size: sizes.iter().copied().max().unwrap_or(0),
            max_tree_latency_s: self.trees.iter().flatten().map(BroadcastTree::max_depth).fold(0.0, f64::max),
            mean_trust: self.nodes.iter().map(RsuNode::trust).sum::<f64>() / p as f64,
            mean_stability: stability.iter().sum::<f64>() / p as f64,
            committed: 0,
            cross_shard_committed: 0,
        });

        let next = (k + 1) as f64 * self.cfg.epoch_seconds;
        if next < self.cfg.duration_s {
            self.push(next, Kind::Epoch(k + 1));
        }
        Ok(())
    }

    /// First cross-link hop from every shard towards every other one,
    /// by fewest hops over links used in both directions.
    fn build_routes(&mut self, shards: &[ShardId]) {
        let q = self.cfg.shard_count;
        let mut links: Vec<Vec<CrossLink>> = vec![Vec::new(); q];
        for &s in shards {
            let t = self.trees[s].as_ref().expect("built above");
            for &l in t.cross_links() {
                let back_root = self.trees[l.to_shard].as_ref().map(BroadcastTree::root);
                links[s].push(l);
                if let Some(br) = back_root {
                    links[l.to_shard].push(CrossLink {
                        from: br,
                        to: l.from,
                        to_shard: s,
                        latency_s: l.latency_s,
                    });
                }
            }
        }
        for l in &mut links {
            l.sort_by(|a, b| a.to_shard.cmp(&b.to_shard).then(a.latency_s.total_cmp(&b.latency_s)));
            l.dedup_by_key(|x| x.to_shard);
        }
        self.routes = vec![vec![None; q]; q];
        for &s in shards {
            let mut first: Vec<Option<CrossLink>> = vec![None; q];
            let mut seen = vec![false; q];
            seen[s] = true;
            let mut queue = VecDeque::new();
            for &l in &links[s] {
                if !seen[l.to_shard] {
                    seen[l.to_shard] = true;
                    first[l.to_shard] = Some(l);
                    queue.push_back(l.to_shard);
                }
            }
            while let Some(x) = queue.pop_front() {
                for &l in &links[x] {
                    if !seen[l.to_shard] {
                        seen[l.to_shard] = true;
                        first[l.to_shard] = first[x];
                        queue.push_back(l.to_shard);
                    }
                }
            }
            self.routes[s] = first;
        }
    }

    fn finish(mut self) -> Result<RunOutput> {
        self.close_epoch();
        let tx_log: Vec<TxLogRow> = self
            .txs
            .iter()
            .map(|r| TxLogRow {
                tx_id: r.tx.id,
                vehicle: r.tx.vehicle,
                origin_rsu: r.tx.origin_rsu,
                origin_shard: r.tx.origin_shard,
                kind: r.tx.kind,
                t_sub: r.tx.submit_time,
                t_con: r.t_con,
                status: r.status,
            })
            .collect();
        let metrics = compute_metrics(&tx_log, &self.byte_log, self.cfg.duration_s, self.nodes.len())?;
        Ok(RunOutput {
            metrics,
            epochs: self.epoch_rows,
            tx_log,
            byte_log: self.byte_log,
            tree_edges: self.tree_edges,
            dag_dump: self.dag_dump,
            handoffs: self.handoffs,
            assignments: self.history,
        })
    }
}
