//! Shared domain types: nodes, positions, seeded randomness and the
//! simulation configuration schema.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type ShardId = usize;

pub const TRUST_MIN: f64 = 0.0;
pub const TRUST_MAX: f64 = 10.0;

/// Planar position in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

pub fn euclidean_distance(a: Position, b: Position) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Raw indicators feeding the network stability score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityIndicators {
    /// Seconds of continuous uptime.
    pub online_time: f64,
    /// Abstract compute units, strictly positive.
    pub compute_capacity: f64,
    pub failure_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsuNode {
    pub id: NodeId,
    pub position: Position,
    trust: f64,
    pub indicators: StabilityIndicators,
    stability: f64,
    pub is_byzantine: bool,
    pub is_offline: bool,
}

impl RsuNode {
    pub fn new(id: NodeId, position: Position, trust: f64, indicators: StabilityIndicators) -> Self {
        Self {
            id,
            position,
            trust: trust.clamp(TRUST_MIN, TRUST_MAX),
            indicators,
            stability: 0.0,
            is_byzantine: false,
            is_offline: false,
        }
    }

    pub fn trust(&self) -> f64 {
        self.trust
    }

    pub fn set_trust(&mut self, trust: f64) {
        self.trust = trust.clamp(TRUST_MIN, TRUST_MAX);
    }

    pub fn stability(&self) -> f64 {
        self.stability
    }

    pub fn set_stability(&mut self, stability: f64) {
        self.stability = stability.clamp(0.0, 1.0);
    }

    /// Builder-style helper used mostly by tests and benchmarks.
    pub fn with_scores(mut self, trust: f64, stability: f64) -> Self {
        self.set_trust(trust);
        self.set_stability(stability);
        self
    }
}

/// Deterministic source of independent random streams.
///
/// Every subsystem draws from its own ChaCha stream, selected by name, so
/// changing how many values one subsystem consumes never shifts another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedSource {
    seed: u64,
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

impl SeedSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Named substream. Distinct names yield distinct ChaCha stream ids.
    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        self.indexed(name, 0)
    }

    /// Named substream further keyed by an index (run id, shard, slot).
    pub fn indexed(&self, name: &str, index: u64) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(name.as_bytes());
        hasher.update(index.to_le_bytes());
        let digest = hasher.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::from_le_bytes(word));
        rng
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    NoDag,
    NoSmlbt,
    NoSharding,
}

impl Ablation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoDag => "no_dag",
            Ablation::NoSmlbt => "no_smlbt",
            Ablation::NoSharding => "no_sharding",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByzantinePolicy {
    /// Never creates, relays or votes; drops client transactions.
    Silent,
    /// Issues forked events sharing a self-parent.
    Equivocate,
    /// Participates in dissemination but never votes YES.
    VoteNo,
    /// Votes honestly but relays late.
    DelayRelay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Uniform,
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossLinkTarget {
    Root,
    RandomMember,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Acceptable node-count gap between shards.
    pub mu: f64,
    /// Acceptable trust gap between shards.
    pub lambda: f64,
    pub stability_gap: f64,
    /// Nodes below this trust count as malicious when the optimizer
    /// evaluates the per-shard malicious ratio.
    pub malicious_trust_cutoff: f64,
    /// Divide the node-count gap by the node count inside the fitness.
    pub normalized_fitness: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            mu: 2.0,
            lambda: 1.0,
            stability_gap: 0.15,
            malicious_trust_cutoff: 2.0,
            normalized_fitness: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringParams {
    pub alpha: f64,
    pub beta: f64,
    /// Weights for (online time, compute capacity, failure probability).
    pub weights: [f64; 3],
    /// Average online time in seconds. The simulator recomputes it every
    /// epoch; this value seeds the first epoch.
    pub t_zero: f64,
    pub gamma: f64,
    /// Required per-role block-generation time for the first epoch.
    pub initial_required_s: f64,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.5,
            weights: [0.4, 0.35, 0.25],
            t_zero: 30.0,
            gamma: 5.0,
            initial_required_s: 0.05,
        }
    }
}

impl ScoringParams {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let field = |name: &str| format!("{prefix}{name}");
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::config(field("weights"), "every weight must be > 0"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(field("weights"), format!("weights sum to {sum}, expected 1")));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::config(field("alpha"), "must be >= 0"));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::config(field("beta"), "must be >= 0"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::config(field("gamma"), "must be > 0"));
        }
        if !(self.initial_required_s > 0.0) {
            return Err(Error::config(field("initial_required_s"), "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GsaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub mutation_factor: f64,
    pub crossover_prob: f64,
    /// Repetitions for the `shard-bench` convergence experiment.
    pub bench_runs: usize,
}

impl Default for GsaConfig {
    fn default() -> Self {
        Self {
            population_size: 50,
            generations: 100,
            mutation_factor: 0.5,
            crossover_prob: 0.9,
            bench_runs: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    /// Per-RSU bandwidth range in Mb/s.
    pub bandwidth_mbps: [f64; 2],
    /// Signal propagation speed in m/s.
    pub propagation_speed: f64,
    pub event_header_bits: f64,
    pub tx_bits: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            bandwidth_mbps: [10.0, 30.0],
            propagation_speed: 2.0e8,
            event_header_bits: 1024.0,
            tx_bits: 1024.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodeInit {
    pub initial_trust: [f64; 2],
    /// Log-normal parameters of compute capacity.
    pub compute_log_mean: f64,
    pub compute_log_sd: f64,
    pub failure_prob: [f64; 2],
    pub initial_online_s: [f64; 2],
    /// Validation cost per transaction in seconds for a node of median
    /// compute capacity; faster nodes scale it down proportionally.
    pub tx_validation_s: f64,
    /// Fixed validation cost per received event.
    pub event_validation_s: f64,
}

impl Default for NodeInit {
    fn default() -> Self {
        Self {
            initial_trust: [5.0, 10.0],
            compute_log_mean: 0.0,
            compute_log_sd: 0.5,
            failure_prob: [0.0, 0.2],
            initial_online_s: [0.0, 60.0],
            tx_validation_s: 0.0005,
            event_validation_s: 0.0002,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub area_km2: f64,
    pub rsu_count: usize,
    pub vehicle_count: usize,
    pub vehicle_speed_kmh: f64,
    pub request_rate_tps: f64,
    pub shard_count: usize,
    pub byzantine_rate: f64,
    pub offline_rate: f64,
    pub byzantine_policy: ByzantinePolicy,
    /// Extra relay delay applied by `delay_relay` adversaries.
    pub byzantine_delay_s: f64,
    /// Maximum tree children and cross-shard links per node.
    pub fanout: usize,
    /// Push fan-out used by the gossip dissemination ablation.
    pub gossip_fanout: usize,
    pub gossip_round_cap: usize,
    pub max_txs_per_event: usize,
    pub event_interval_s: f64,
    pub epoch_seconds: f64,
    /// Submission window length; metrics divide by this duration.
    pub duration_s: f64,
    /// Extra simulated time after the window to let queues drain.
    pub drain_s: f64,
    /// Leader view-change timeout of the single-leader ablation.
    pub leader_timeout_s: f64,
    pub rng_seed: u64,
    pub placement: Placement,
    pub cross_link_target: CrossLinkTarget,
    pub thresholds: Thresholds,
    pub scoring: ScoringParams,
    pub nodes: NodeInit,
    pub gsa: GsaConfig,
    pub link: LinkConfig,
    pub ablation: Ablation,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            area_km2: 100.0,
            rsu_count: 100,
            vehicle_count: 1000,
            vehicle_speed_kmh: 60.0,
            request_rate_tps: 3000.0,
            shard_count: 8,
            byzantine_rate: 0.1,
            offline_rate: 0.05,
            byzantine_policy: ByzantinePolicy::Silent,
            byzantine_delay_s: 0.5,
            fanout: 8,
            gossip_fanout: 3,
            gossip_round_cap: 32,
            max_txs_per_event: 1024,
            event_interval_s: 0.05,
            epoch_seconds: 10.0,
            duration_s: 60.0,
            drain_s: 60.0,
            leader_timeout_s: 1.0,
            rng_seed: 42,
            placement: Placement::Uniform,
            cross_link_target: CrossLinkTarget::Root,
            thresholds: Thresholds::default(),
            scoring: ScoringParams::default(),
            nodes: NodeInit::default(),
            gsa: GsaConfig::default(),
            link: LinkConfig::default(),
            ablation: Ablation::None,
        }
    }
}

fn check_rate(value: f64, field: &str) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::config(field, format!("{value} is outside [0, 1]")))
    }
}

fn check_positive(value: f64, field: &str) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("{value} must be positive and finite")))
    }
}

fn check_range(range: [f64; 2], field: &str) -> Result<()> {
    if range[0].is_finite() && range[1].is_finite() && range[0] <= range[1] {
        Ok(())
    } else {
        Err(Error::config(field, format!("range {range:?} is empty")))
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: SimConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Side length of the square research area in meters.
    pub fn area_side_m(&self) -> f64 {
        self.area_km2.sqrt() * 1000.0
    }

    pub fn validate(&self) -> Result<()> {
        check_positive(self.area_km2, "area_km2")?;
        if self.shard_count < 2 {
            return Err(Error::config("shard_count", format!("{} < 2", self.shard_count)));
        }
        if self.rsu_count < 3 * self.shard_count {
            return Err(Error::config(
                "rsu_count",
                format!("{} RSUs cannot fill {} shards of at least 3", self.rsu_count, self.shard_count),
            ));
        }
        if self.vehicle_count == 0 {
            return Err(Error::config("vehicle_count", "must be >= 1"));
        }
        if !(self.vehicle_speed_kmh >= 0.0 && self.vehicle_speed_kmh.is_finite()) {
            return Err(Error::config("vehicle_speed_kmh", "must be >= 0"));
        }
        if !(self.request_rate_tps >= 0.0 && self.request_rate_tps.is_finite()) {
            return Err(Error::config("request_rate_tps", "must be >= 0"));
        }
        check_rate(self.byzantine_rate, "byzantine_rate")?;
        check_rate(self.offline_rate, "offline_rate")?;
        if !(self.byzantine_delay_s >= 0.0) {
            return Err(Error::config("byzantine_delay_s", "must be >= 0"));
        }
        if self.fanout == 0 {
            return Err(Error::config("fanout", "must be >= 1"));
        }
        if self.gossip_fanout == 0 {
            return Err(Error::config("gossip_fanout", "must be >= 1"));
        }
        if self.gossip_round_cap == 0 {
            return Err(Error::config("gossip_round_cap", "must be >= 1"));
        }
        if self.max_txs_per_event == 0 {
            return Err(Error::config("max_txs_per_event", "must be >= 1"));
        }
        check_positive(self.event_interval_s, "event_interval_s")?;
        check_positive(self.epoch_seconds, "epoch_seconds")?;
        check_positive(self.duration_s, "duration_s")?;
        if !(self.drain_s >= 0.0) {
            return Err(Error::config("drain_s", "must be >= 0"));
        }
        check_positive(self.leader_timeout_s, "leader_timeout_s")?;

        let t = &self.thresholds;
        if !(t.mu >= 0.0) {
            return Err(Error::config("thresholds.mu", "must be >= 0"));
        }
        if !(t.lambda >= 0.0) {
            return Err(Error::config("thresholds.lambda", "must be >= 0"));
        }
        check_rate(t.stability_gap, "thresholds.stability_gap")?;
        if !(TRUST_MIN..=TRUST_MAX).contains(&t.malicious_trust_cutoff) {
            return Err(Error::config("thresholds.malicious_trust_cutoff", "must lie in [0, 10]"));
        }

        self.scoring.validate("scoring.")?;

        let n = &self.nodes;
        check_range(n.initial_trust, "nodes.initial_trust")?;
        if n.initial_trust[0] < TRUST_MIN || n.initial_trust[1] > TRUST_MAX {
            return Err(Error::config("nodes.initial_trust", "must lie in [0, 10]"));
        }
        if !(n.compute_log_sd >= 0.0) {
            return Err(Error::config("nodes.compute_log_sd", "must be >= 0"));
        }
        check_range(n.failure_prob, "nodes.failure_prob")?;
        check_rate(n.failure_prob[0], "nodes.failure_prob")?;
        check_rate(n.failure_prob[1], "nodes.failure_prob")?;
        check_range(n.initial_online_s, "nodes.initial_online_s")?;
        if n.initial_online_s[0] < 0.0 {
            return Err(Error::config("nodes.initial_online_s", "must be >= 0"));
        }
        if !(n.tx_validation_s >= 0.0) {
            return Err(Error::config("nodes.tx_validation_s", "must be >= 0"));
        }
        if !(n.event_validation_s >= 0.0) {
            return Err(Error::config("nodes.event_validation_s", "must be >= 0"));
        }

        let g = &self.gsa;
        if g.population_size < 4 {
            return Err(Error::config("gsa.population_size", "must be >= 4"));
        }
        if g.generations == 0 {
            return Err(Error::config("gsa.generations", "must be >= 1"));
        }
        if !(g.mutation_factor > 0.0 && g.mutation_factor <= 1.0) {
            return Err(Error::config("gsa.mutation_factor", "must lie in (0, 1]"));
        }
        if !(g.crossover_prob > 0.0 && g.crossover_prob <= 1.0) {
            return Err(Error::config("gsa.crossover_prob", "must lie in (0, 1]"));
        }
        if g.bench_runs == 0 {
            return Err(Error::config("gsa.bench_runs", "must be >= 1"));
        }

        let l = &self.link;
        check_range(l.bandwidth_mbps, "link.bandwidth_mbps")?;
        if !(l.bandwidth_mbps[0] > 0.0) {
            return Err(Error::config("link.bandwidth_mbps", "must be > 0"));
        }
        check_positive(l.propagation_speed, "link.propagation_speed")?;
        check_positive(l.event_header_bits, "link.event_header_bits")?;
        check_positive(l.tx_bits, "link.tx_bits")?;
        Ok(())
    }
}
