//! Dynamic sharding of roadside units with a hashgraph-style DAG consensus
//! inside each shard, driven by a deterministic vehicular-network simulator.

pub mod error;
pub mod hashgraph;
pub mod model;
pub mod scoring;
pub mod sharding;
pub mod sim;
pub mod smlbt;

pub use error::{Error, Result};
pub use model::{
    euclidean_distance, seeded_rng, Ablation, ByzantinePolicy, NodeId, Position, RsuNode, SeedSource, ShardId,
    SimConfig, StabilityIndicators,
};
