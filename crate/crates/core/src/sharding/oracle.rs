use super::{fitness, ShardAssignment};
use crate::error::{Error, Result};
use crate::model::{RsuNode, Thresholds};

/// Largest search space the exhaustive oracle accepts.
pub const BRUTE_FORCE_LIMIT: u64 = 1_000_000;

/// Exhaustive minimum over every assignment with no empty shard. Genomes are
/// visited in lexicographic order and only strictly better ones replace the
/// incumbent, so ties resolve to the lexicographically smallest genome.
pub fn brute_force_optimal(nodes: &[RsuNode], q: usize, t: &Thresholds) -> Result<(ShardAssignment, f64)> {
    let p = nodes.len();
    if q == 0 || p < q {
        return Err(Error::Infeasible(format!("{p} nodes cannot fill {q} shards")));
    }
    let space = (q as u64)
        .checked_pow(p as u32)
        .filter(|s| *s <= BRUTE_FORCE_LIMIT)
        .ok_or_else(|| Error::TooLarge(format!("{q}^{p} assignments exceed {BRUTE_FORCE_LIMIT}")))?;

    let mut genes = vec![0usize; p];
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..space {
        let mut seen = vec![false; q];
        for &g in &genes {
            seen[g] = true;
        }
        if seen.iter().all(|&s| s) {
            let a = ShardAssignment::new(genes.clone(), q)?;
            let f = fitness(&a, nodes, t)?;
            if best.as_ref().map_or(true, |(_, bf)| f < *bf) {
                best = Some((genes.clone(), f));
            }
        }
        // Odometer increment, last position fastest.
        for pos in (0..p).rev() {
            genes[pos] += 1;
            if genes[pos] < q {
                break;
            }
            genes[pos] = 0;
        }
    }
    let (genes, f) = best.expect("p >= q guarantees a surjective assignment");
    Ok((ShardAssignment::new(genes, q)?, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sharding::testutil::nodes;

    #[test]
    fn identical_nodes_split_evenly() {
        let ns = nodes(&[(5.0, 0.5); 4]);
        let (a, f) = brute_force_optimal(&ns, 2, &Thresholds::default()).unwrap();
        assert_eq!(f, 0.0);
        assert_eq!(a.sizes(), vec![2, 2]);
        assert_eq!(a.genes(), &[0, 0, 1, 1]);
    }

    #[test]
    fn two_nodes_forced_split() {
        let ns = nodes(&[(5.0, 0.5), (6.0, 0.5)]);
        let (a, _) = brute_force_optimal(&ns, 2, &Thresholds::default()).unwrap();
        assert_eq!(a.sizes(), vec![1, 1]);
        assert_eq!(a.genes(), &[0, 1]);
    }

    #[test]
    fn low_trust_node_placement_is_minimal() {
        let ns = nodes(&[(1.0, 0.5), (6.0, 0.5), (6.0, 0.5), (7.0, 0.5), (6.5, 0.5), (6.0, 0.5)]);
        let t = Thresholds::default();
        let (a, f) = brute_force_optimal(&ns, 2, &t).unwrap();
        // Independent scan: no other surjective genome beats it.
        for code in 0u32..64 {
            let genes: Vec<usize> = (0..6).map(|i| ((code >> (5 - i)) & 1) as usize).collect();
            let cand = ShardAssignment::new(genes, 2).unwrap();
            if cand.has_empty_shard() {
                continue;
            }
            assert!(fitness(&cand, &ns, &t).unwrap() >= f);
        }
        assert_eq!(fitness(&a, &ns, &t).unwrap(), f);
    }

    #[test]
    fn refuses_large_instances() {
        let ns = nodes(&[(5.0, 0.5); 21]);
        assert!(matches!(brute_force_optimal(&ns, 2, &Thresholds::default()), Err(Error::TooLarge(_))));
        assert!(matches!(brute_force_optimal(&ns[..1], 2, &Thresholds::default()), Err(Error::Infeasible(_))));
    }
}
