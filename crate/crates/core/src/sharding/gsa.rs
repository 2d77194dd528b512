use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fitness, ShardAssignment};
use crate::error::{Error, Result};
use crate::model::{GsaConfig, RsuNode, Thresholds};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsaParams {
    pub population_size: usize,
    pub generations: usize,
    pub mutation_factor: f64,
    pub crossover_prob: f64,
    /// Maximum stability among all nodes.
    pub s_max: f64,
}

impl GsaParams {
    pub fn new(population_size: usize, generations: usize, mutation_factor: f64, crossover_prob: f64, s_max: f64) -> Self {
        Self {
            population_size,
            generations,
            mutation_factor,
            crossover_prob,
            s_max,
        }
    }

    /// Take the optimizer settings from config and `s_max` from the nodes.
    pub fn from_config(cfg: &GsaConfig, nodes: &[RsuNode]) -> Self {
        let s_max = nodes.iter().map(|n| n.stability()).fold(0.0, f64::max);
        Self::new(cfg.population_size, cfg.generations, cfg.mutation_factor, cfg.crossover_prob, s_max)
    }

    fn validate(&self) -> Result<()> {
        if self.population_size < 4 {
            return Err(Error::config("gsa.population_size", "must be >= 4"));
        }
        if self.generations == 0 {
            return Err(Error::config("gsa.generations", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.mutation_factor) {
            return Err(Error::config("gsa.mutation_factor", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            return Err(Error::config("gsa.crossover_prob", "must lie in [0, 1]"));
        }
        if !(self.s_max > 0.0) {
            return Err(Error::config("gsa.s_max", "must be > 0"));
        }
        Ok(())
    }
}

/// Which recombination probabilities the optimizer uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Probabilities scaled down for stable nodes.
    Gsa,
    /// Plain MF / CP.
    Ga,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Gsa => "gsa",
            Variant::Ga => "ga",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsaOutcome {
    pub assignment: ShardAssignment,
    pub fitness: f64,
    /// Best-so-far fitness after each generation.
    pub history: Vec<f64>,
}

fn stability_factor(stab: f64, s_max: f64) -> f64 {
    1.0 - (stab + stab) / (2.0 * s_max)
}

fn recombine<R: Rng + ?Sized>(
    take: &ShardAssignment,
    keep: &ShardAssignment,
    rate: f64,
    s_max: Option<f64>,
    stab: &[f64],
    rng: &mut R,
) -> ShardAssignment {
    assert_eq!(take.len(), keep.len(), "genome lengths differ");
    let mut out = keep.clone();
    for (j, gene) in out.genes_mut().iter_mut().enumerate() {
        // Gene j belongs to node j, so both parents carry the same node
        // stability at that position.
        let p = match s_max {
            Some(s_max) => rate * stability_factor(stab[j], s_max),
            None => rate,
        };
        if rng.random::<f64>() < p {
            *gene = take.genes()[j];
        }
    }
    out
}

/// Stability-weighted mutation: position `j` takes `pb[j]` with probability
/// `MF * (1 - s_j / s_max)`, else keeps `pa[j]`.
pub fn mutate<R: Rng + ?Sized>(
    pa: &ShardAssignment,
    pb: &ShardAssignment,
    params: &GsaParams,
    stab: &[f64],
    rng: &mut R,
) -> ShardAssignment {
    recombine(pb, pa, params.mutation_factor, Some(params.s_max), stab, rng)
}

/// Stability-weighted crossover: position `j` takes `m[j]` with probability
/// `CP * (1 - s_j / s_max)`, else keeps `pc[j]`.
pub fn crossover<R: Rng + ?Sized>(
    m: &ShardAssignment,
    pc: &ShardAssignment,
    params: &GsaParams,
    stab: &[f64],
    rng: &mut R,
) -> ShardAssignment {
    recombine(m, pc, params.crossover_prob, Some(params.s_max), stab, rng)
}

fn distinct_three<R: Rng + ?Sized>(n: usize, exclude: usize, rng: &mut R) -> (usize, usize, usize) {
    let mut picks = [usize::MAX; 3];
    let mut k = 0;
    while k < 3 {
        let c = rng.random_range(0..n);
        if c != exclude && !picks[..k].contains(&c) {
            picks[k] = c;
            k += 1;
        }
    }
    (picks[0], picks[1], picks[2])
}

/// Shared evolutionary loop. `seeds` replace the first population slots
/// (warm start from a previous epoch's assignment).
pub fn run_optimizer<R: Rng + ?Sized>(
    nodes: &[RsuNode],
    q: usize,
    params: &GsaParams,
    thresholds: &Thresholds,
    variant: Variant,
    seeds: &[ShardAssignment],
    rng: &mut R,
) -> Result<GsaOutcome> {
    let p = nodes.len();
    if p < q {
        return Err(Error::config("shard_count", format!("{p} nodes cannot fill {q} shards")));
    }
    if q == 0 {
        return Err(Error::config("shard_count", "must be >= 1"));
    }
    params.validate()?;
    let stab: Vec<f64> = nodes.iter().map(|n| n.stability()).collect();
    let n = params.population_size;

    let mut population: Vec<ShardAssignment> = (0..n)
        .map(|_| {
            let mut a = ShardAssignment::random(p, q, rng);
            a.repair(&stab);
            a
        })
        .collect();
    for (slot, seed) in population.iter_mut().zip(seeds) {
        if seed.len() == p && seed.shard_count() == q {
            let mut s = seed.clone();
            s.repair(&stab);
            *slot = s;
        }
    }
    let mut scores = population
        .iter()
        .map(|a| fitness(a, nodes, thresholds))
        .collect::<Result<Vec<f64>>>()?;

    let mut best_idx = 0;
    for i in 1..n {
        if scores[i] < scores[best_idx] {
            best_idx = i;
        }
    }
    let mut best = population[best_idx].clone();
    let mut best_fit = scores[best_idx];
    let mut history = Vec::with_capacity(params.generations);

    let s_max = match variant {
        Variant::Gsa => Some(params.s_max),
        Variant::Ga => None,
    };

    // Generational: trials draw on the population as it stood at the start
    // of the generation and successful ones fill the next population.
    for _ in 0..params.generations {
        let current = population.clone();
        for u in 0..n {
            let (a, b, c) = distinct_three(n, u, rng);
            let m = recombine(&current[b], &current[a], params.mutation_factor, s_max, &stab, rng);
            let mut t = recombine(&m, &current[c], params.crossover_prob, s_max, &stab, rng);
            t.repair(&stab);
            let ft = fitness(&t, nodes, thresholds)?;
            if ft < scores[u] {
                if ft < best_fit {
                    best_fit = ft;
                    best = t.clone();
                }
                population[u] = t;
                scores[u] = ft;
            }
        }
        history.push(best_fit);
    }

    Ok(GsaOutcome {
        assignment: best,
        fitness: best_fit,
        history,
    })
}

pub fn gsa_run<R: Rng + ?Sized>(
    nodes: &[RsuNode],
    q: usize,
    params: &GsaParams,
    thresholds: &Thresholds,
    rng: &mut R,
) -> Result<GsaOutcome> {
    run_optimizer(nodes, q, params, thresholds, Variant::Gsa, &[], rng)
}

pub fn ga_baseline_run<R: Rng + ?Sized>(
    nodes: &[RsuNode],
    q: usize,
    params: &GsaParams,
    thresholds: &Thresholds,
    rng: &mut R,
) -> Result<GsaOutcome> {
    run_optimizer(nodes, q, params, thresholds, Variant::Ga, &[], rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::seeded_rng;
    use crate::sharding::brute_force_optimal;
    use crate::sharding::testutil::nodes;
    use rand::Rng;

    fn assign(genes: &[usize], q: usize) -> ShardAssignment {
        ShardAssignment::new(genes.to_vec(), q).unwrap()
    }

    fn params(mf: f64, cp: f64, s_max: f64) -> GsaParams {
        GsaParams::new(4, 1, mf, cp, s_max)
    }

    #[test]
    fn mutate_identity_cases() {
        let pa = assign(&[0, 1, 0, 1], 2);
        let pb = assign(&[1, 0, 1, 0], 2);
        let mut rng = seeded_rng(1);
        let stab = [0.3, 0.6, 0.1, 0.9];
        assert_eq!(mutate(&pa, &pb, &params(0.0, 0.5, 1.0), &stab, &mut rng), pa);
        let full = [1.0; 4];
        assert_eq!(mutate(&pa, &pb, &params(1.0, 0.5, 1.0), &full, &mut rng), pa);
        let zero = [0.0; 4];
        assert_eq!(mutate(&pa, &pb, &params(1.0, 0.5, 1.0), &zero, &mut rng), pb);
    }

    #[test]
    fn crossover_identity_cases() {
        let m = assign(&[0, 1, 0, 1], 2);
        let pc = assign(&[1, 0, 1, 0], 2);
        let mut rng = seeded_rng(2);
        let stab = [0.3, 0.6, 0.1, 0.9];
        assert_eq!(crossover(&m, &pc, &params(0.5, 0.0, 1.0), &stab, &mut rng), pc);
        assert_eq!(crossover(&m, &pc, &params(0.5, 1.0, 1.0), &[1.0; 4], &mut rng), pc);
        assert_eq!(crossover(&m, &pc, &params(0.5, 1.0, 1.0), &[0.0; 4], &mut rng), m);
    }

    #[test]
    fn mutation_rate_matches_weighting() {
        // With stability 0.5 of s_max 1 and MF 0.8, swap rate is 0.4.
        let pa = assign(&vec![0; 2000], 2);
        let pb = assign(&vec![1; 2000], 2);
        let stab = vec![0.5; 2000];
        let mut rng = seeded_rng(3);
        let m = mutate(&pa, &pb, &params(0.8, 0.5, 1.0), &stab, &mut rng);
        let rate = m.genes().iter().filter(|&&g| g == 1).count() as f64 / 2000.0;
        assert!((rate - 0.4).abs() < 0.04, "rate {rate}");
    }

    #[test]
    fn infeasible_instance_is_config_error() {
        let ns = nodes(&[(5.0, 0.5); 2]);
        let p = GsaParams::new(4, 1, 0.5, 0.9, 1.0);
        let err = gsa_run(&ns, 3, &p, &Thresholds::default(), &mut seeded_rng(0)).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let ns = nodes(&[(5.0, 0.2), (7.0, 0.9), (3.0, 0.4), (8.0, 0.6), (6.0, 0.3), (4.0, 0.7)]);
        let p = GsaParams::from_config(
            &GsaConfig {
                population_size: 4,
                generations: 1,
                ..GsaConfig::default()
            },
            &ns,
        );
        let a = gsa_run(&ns, 2, &p, &Thresholds::default(), &mut seeded_rng(9)).unwrap();
        let b = gsa_run(&ns, 2, &p, &Thresholds::default(), &mut seeded_rng(9)).unwrap();
        assert_eq!(a, b);
        let c = ga_baseline_run(&ns, 2, &p, &Thresholds::default(), &mut seeded_rng(9)).unwrap();
        let d = ga_baseline_run(&ns, 2, &p, &Thresholds::default(), &mut seeded_rng(9)).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn identical_nodes_reach_zero() {
        let ns = nodes(&[(6.0, 0.5); 10]);
        let p = GsaParams::new(20, 30, 0.5, 0.9, 0.5);
        let out = gsa_run(&ns, 2, &p, &Thresholds::default(), &mut seeded_rng(4)).unwrap();
        assert_eq!(out.fitness, 0.0);
        let out = ga_baseline_run(&ns, 2, &p, &Thresholds::default(), &mut seeded_rng(4)).unwrap();
        assert_eq!(out.fitness, 0.0);
    }

    #[test]
    fn history_is_monotone() {
        let mut rng = seeded_rng(5);
        let spec: Vec<(f64, f64)> = (0..30).map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.0..1.0))).collect();
        let ns = nodes(&spec);
        let p = GsaParams::from_config(&GsaConfig::default(), &ns);
        let out = gsa_run(&ns, 3, &p, &Thresholds::default(), &mut rng).unwrap();
        assert_eq!(out.history.len(), p.generations);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*out.history.last().unwrap(), out.fitness);
        assert_eq!(fitness(&out.assignment, &ns, &Thresholds::default()).unwrap(), out.fitness);
    }

    #[test]
    fn max_stability_means_pure_selection() {
        let mut rng = seeded_rng(6);
        let spec: Vec<(f64, f64)> = (0..12).map(|_| (rng.random_range(0.0..10.0), 0.8)).collect();
        let ns = nodes(&spec);
        let p = GsaParams::new(8, 25, 0.5, 0.9, 0.8);
        // Rebuild the initial population with the same stream to compare.
        let mut probe = seeded_rng(77);
        let stab = vec![0.8; 12];
        let initial: Vec<ShardAssignment> = (0..8)
            .map(|_| {
                let mut a = ShardAssignment::random(12, 3, &mut probe);
                a.repair(&stab);
                a
            })
            .collect();
        let out = gsa_run(&ns, 3, &p, &Thresholds::default(), &mut seeded_rng(77)).unwrap();
        assert!(initial.contains(&out.assignment), "no gene may change");
        let best_initial = initial
            .iter()
            .map(|a| fitness(a, &ns, &Thresholds::default()).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.fitness, best_initial);
    }

    #[test]
    fn warm_start_is_kept_when_optimal() {
        let ns = nodes(&[(6.0, 0.5); 6]);
        let seed = assign(&[0, 1, 0, 1, 0, 1], 2);
        let p = GsaParams::new(6, 1, 0.5, 0.9, 0.5);
        let out = run_optimizer(&ns, 2, &p, &Thresholds::default(), Variant::Gsa, &[seed], &mut seeded_rng(1)).unwrap();
        assert_eq!(out.fitness, 0.0);
    }

    #[test]
    fn small_instance_reaches_oracle() {
        let mut rng = seeded_rng(11);
        let spec: Vec<(f64, f64)> = (0..8).map(|_| (rng.random_range(0.0..10.0), rng.random_range(0.0..1.0))).collect();
        let ns = nodes(&spec);
        let (_, opt) = brute_force_optimal(&ns, 2, &Thresholds::default()).unwrap();
        let p = GsaParams::from_config(
            &GsaConfig {
                population_size: 30,
                generations: 200,
                ..GsaConfig::default()
            },
            &ns,
        );
        let out = gsa_run(&ns, 2, &p, &Thresholds::default(), &mut rng).unwrap();
        assert!((out.fitness - opt).abs() < 1e-9, "gsa {} oracle {opt}", out.fitness);
    }
}
