//! Shard-quality metrics, the penalized fitness and the genetic sharding
//! optimizer (plus a plain GA baseline and an exhaustive oracle).

mod gsa;
mod oracle;

pub use gsa::{crossover, ga_baseline_run, gsa_run, mutate, run_optimizer, GsaOutcome, GsaParams, Variant};
pub use oracle::{brute_force_optimal, BRUTE_FORCE_LIMIT};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RsuNode, ShardId, Thresholds};

/// Penalty added once when any shard-quality threshold is breached.
pub const PENALTY: f64 = 1000.0;
/// Malicious-ratio bound for a shard.
pub const MAX_MALICIOUS_RATIO: f64 = 1.0 / 3.0;

/// Total map from node index to shard index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShardAssignment {
    genes: Vec<ShardId>,
    shard_count: usize,
}

impl ShardAssignment {
    pub fn new(genes: Vec<ShardId>, shard_count: usize) -> Result<Self> {
        if shard_count == 0 {
            return Err(Error::Infeasible("zero shards".into()));
        }
        if let Some(bad) = genes.iter().find(|g| **g >= shard_count) {
            return Err(Error::Domain(format!("shard index {bad} out of range 0..{shard_count}")));
        }
        Ok(Self { genes, shard_count })
    }

    pub fn random<R: Rng + ?Sized>(nodes: usize, shard_count: usize, rng: &mut R) -> Self {
        let genes = (0..nodes).map(|_| rng.random_range(0..shard_count)).collect();
        Self { genes, shard_count }
    }

    pub fn genes(&self) -> &[ShardId] {
        &self.genes
    }

    pub fn shard_of(&self, node: usize) -> ShardId {
        self.genes[node]
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn shard_count(&self) -> usize {
        self.shard_count
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.shard_count];
        for &g in &self.genes {
            sizes[g] += 1;
        }
        sizes
    }

    /// Member lists per shard, ascending node index.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.shard_count];
        for (i, &g) in self.genes.iter().enumerate() {
            out[g].push(i);
        }
        out
    }

    pub fn has_empty_shard(&self) -> bool {
        self.sizes().contains(&0)
    }

    /// Fill empty shards: each empty shard takes the most stable node of
    /// the currently largest shard (lowest index breaks ties on both).
    pub fn repair(&mut self, stability: &[f64]) {
        if self.genes.len() < self.shard_count {
            return;
        }
        loop {
            let sizes = self.sizes();
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                return;
            };
            let largest = (0..self.shard_count)
                .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
                .expect("at least one shard");
            let mover = (0..self.genes.len())
                .filter(|&i| self.genes[i] == largest)
                .max_by(|&a, &b| stability[a].total_cmp(&stability[b]).then(b.cmp(&a)))
                .expect("largest shard is nonempty");
            self.genes[mover] = empty;
        }
    }

    pub(crate) fn genes_mut(&mut self) -> &mut [ShardId] {
        &mut self.genes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardMetrics {
    pub count_gap: f64,
    pub trust_gap: f64,
    pub stability_gap: f64,
    pub max_malicious_ratio: f64,
    pub shard_trust: Vec<f64>,
    pub shard_stability: Vec<f64>,
    pub shard_sizes: Vec<usize>,
}

fn gap(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Metrics with an arbitrary malicious classifier.
pub fn shard_metrics_with<F>(assign: &ShardAssignment, nodes: &[RsuNode], is_malicious: F) -> Result<ShardMetrics>
where
    F: Fn(&RsuNode) -> bool,
{
    if assign.len() != nodes.len() {
        return Err(Error::Domain(format!(
            "assignment covers {} nodes, population has {}",
            assign.len(),
            nodes.len()
        )));
    }
    let q = assign.shard_count();
    let mut trust = vec![0.0; q];
    let mut stab = vec![0.0; q];
    let mut sizes = vec![0usize; q];
    let mut bad = vec![0usize; q];
    for (node, &s) in nodes.iter().zip(assign.genes()) {
        trust[s] += node.trust();
        stab[s] += node.stability();
        sizes[s] += 1;
        if is_malicious(node) {
            bad[s] += 1;
        }
    }
    if let Some(empty) = sizes.iter().position(|&n| n == 0) {
        return Err(Error::EmptyShard(empty));
    }
    let mut max_ratio: f64 = 0.0;
    for j in 0..q {
        let n = sizes[j] as f64;
        trust[j] /= n;
        stab[j] /= n;
        max_ratio = max_ratio.max(bad[j] as f64 / n);
    }
    let size_f: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    Ok(ShardMetrics {
        count_gap: gap(&size_f),
        trust_gap: gap(&trust),
        stability_gap: gap(&stab),
        max_malicious_ratio: max_ratio,
        shard_trust: trust,
        shard_stability: stab,
        shard_sizes: sizes,
    })
}

/// Metrics where a node counts as malicious when its trust is below `cutoff`.
pub fn shard_metrics(assign: &ShardAssignment, nodes: &[RsuNode], cutoff: f64) -> Result<ShardMetrics> {
    shard_metrics_with(assign, nodes, |n| n.trust() < cutoff)
}

/// True when any of the four threshold conditions is breached.
pub fn breaches(m: &ShardMetrics, t: &Thresholds) -> bool {
    m.trust_gap > t.lambda
        || m.count_gap > t.mu
        || m.max_malicious_ratio > MAX_MALICIOUS_RATIO
        || m.stability_gap > t.stability_gap
}

/// Penalized fitness from precomputed metrics; lower is better.
pub fn fitness_from_metrics(m: &ShardMetrics, t: &Thresholds, nodes: usize) -> f64 {
    let psi = if breaches(m, t) { PENALTY } else { 0.0 };
    let count = if t.normalized_fitness && nodes > 0 {
        m.count_gap / nodes as f64
    } else {
        m.count_gap
    };
    m.trust_gap + count + m.stability_gap + m.max_malicious_ratio + psi
}

pub fn fitness(assign: &ShardAssignment, nodes: &[RsuNode], t: &Thresholds) -> Result<f64> {
    let m = shard_metrics(assign, nodes, t.malicious_trust_cutoff)?;
    Ok(fitness_from_metrics(&m, t, nodes.len()))
}


#[cfg(test)]
mod tests {
    use super::testutil::nodes;
    use super::*;

    fn thresholds() -> Thresholds {
        Thresholds::default()
    }

    #[test]
    fn equal_means_give_zero_trust_gap() {
        let ns = nodes(&[(6.0, 0.5), (4.0, 0.5), (5.0, 0.5), (5.0, 0.5)]);
        let a = ShardAssignment::new(vec![0, 0, 1, 1], 2).unwrap();
        let m = shard_metrics(&a, &ns, 2.0).unwrap();
        assert_eq!(m.trust_gap, 0.0);
        assert_eq!(m.count_gap, 0.0);
    }

    #[test]
    fn equal_sizes_zero_count_gap() {
        let ns = nodes(&[(5.0, 0.5); 15]);
        let genes = (0..15).map(|i| i % 3).collect();
        let a = ShardAssignment::new(genes, 3).unwrap();
        assert_eq!(shard_metrics(&a, &ns, 2.0).unwrap().count_gap, 0.0);
    }

    #[test]
    fn trust_gap_is_max_minus_min_of_means() {
        let ns = nodes(&[(7.2, 0.5), (5.1, 0.5), (6.0, 0.5)]);
        let a = ShardAssignment::new(vec![0, 1, 2], 3).unwrap();
        let m = shard_metrics(&a, &ns, 2.0).unwrap();
        assert!((m.trust_gap - 2.1).abs() < 1e-12);
    }

    #[test]
    fn empty_shard_is_structural_error() {
        let ns = nodes(&[(5.0, 0.5); 3]);
        let a = ShardAssignment::new(vec![0, 0, 0], 2).unwrap();
        assert!(matches!(shard_metrics(&a, &ns, 2.0), Err(Error::EmptyShard(1))));
    }

    #[test]
    fn symmetric_instance_has_zero_fitness() {
        let ns = nodes(&[(6.0, 0.4), (6.0, 0.4), (6.0, 0.4), (6.0, 0.4)]);
        let a = ShardAssignment::new(vec![0, 1, 0, 1], 2).unwrap();
        assert_eq!(fitness(&a, &ns, &thresholds()).unwrap(), 0.0);
    }

    #[test]
    fn count_gap_over_mu_adds_penalty_once() {
        let ns = nodes(&[(6.0, 0.4); 5]);
        // sizes 4 and 1 -> gap 3 > mu = 2
        let a = ShardAssignment::new(vec![0, 0, 0, 0, 1], 2).unwrap();
        assert_eq!(fitness(&a, &ns, &thresholds()).unwrap(), 3.0 + PENALTY);
    }

    #[test]
    fn stability_gap_threshold() {
        let ns = nodes(&[(6.0, 0.6), (6.0, 0.4)]);
        let a = ShardAssignment::new(vec![0, 1], 2).unwrap();
        let f = fitness(&a, &ns, &thresholds()).unwrap();
        assert!((f - (0.2 + PENALTY)).abs() < 1e-9);
        let ns = nodes(&[(6.0, 0.5), (6.0, 0.4)]);
        let f = fitness(&a, &ns, &thresholds()).unwrap();
        assert!((f - 0.1).abs() < 1e-9);
    }

    #[test]
    fn penalty_never_doubles() {
        // Every condition breached at once.
        let ns = nodes(&[(0.5, 1.0), (0.5, 1.0), (0.5, 1.0), (9.0, 0.0)]);
        let a = ShardAssignment::new(vec![0, 0, 0, 1], 2).unwrap();
        let m = shard_metrics(&a, &ns, 2.0).unwrap();
        let f = fitness(&a, &ns, &thresholds()).unwrap();
        let base = m.trust_gap + m.count_gap + m.stability_gap + m.max_malicious_ratio;
        assert!((f - base - PENALTY).abs() < 1e-9);
    }

    #[test]
    fn malicious_ratio_uses_cutoff() {
        let ns = nodes(&[(1.0, 0.5), (5.0, 0.5), (5.0, 0.5), (5.0, 0.5)]);
        let a = ShardAssignment::new(vec![0, 0, 1, 1], 2).unwrap();
        let m = shard_metrics(&a, &ns, 2.0).unwrap();
        assert_eq!(m.max_malicious_ratio, 0.5);
    }

    #[test]
    fn normalized_fitness_divides_count_gap() {
        let ns = nodes(&[(6.0, 0.4); 4]);
        let a = ShardAssignment::new(vec![0, 0, 0, 1], 2).unwrap();
        let t = Thresholds {
            normalized_fitness: true,
            ..Thresholds::default()
        };
        assert!((fitness(&a, &ns, &t).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn repair_fills_empty_shards_from_largest() {
        let stab = [0.1, 0.9, 0.3, 0.2, 0.5];
        let mut a = ShardAssignment::new(vec![0, 0, 0, 1, 1], 3).unwrap();
        a.repair(&stab);
        assert_eq!(a.genes(), &[0, 2, 0, 1, 1]);
        assert!(!a.has_empty_shard());
    }
}
