//! Per-epoch trust updates and network-stability scores.
//!
//! Trust is cumulative: every epoch contributes a reward for processed
//! transactions minus a penalty for overrunning the required
//! block-generation time in each tree role, and the result is clamped to
//! `[0, 10]`. The stability score is a weighted sum of three sub-scores
//! (online time, compute capacity, failure probability), each in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ScoringParams, StabilityIndicators, TRUST_MAX, TRUST_MIN};

/// Tree roles a node communicates with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Root,
    Father,
    Child,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Root, Role::Father, Role::Child];

    pub fn index(self) -> usize {
        match self {
            Role::Root => 0,
            Role::Father => 1,
            Role::Child => 2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochNodeStats {
    pub ok_txs: u64,
    pub failed_txs: u64,
    /// Actual seconds per role, indexed by [`Role::index`].
    pub role_times: [f64; 3],
    /// Required seconds per role, strictly positive.
    pub role_required: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationComputeStats {
    pub log_min: f64,
    pub log_max: f64,
}

impl PopulationComputeStats {
    pub fn from_capacities<I: IntoIterator<Item = f64>>(caps: I) -> Result<Self> {
        let mut log_min = f64::INFINITY;
        let mut log_max = f64::NEG_INFINITY;
        for c in caps {
            if !(c > 0.0) {
                return Err(Error::Domain(format!("compute capacity {c} must be > 0")));
            }
            let l = c.ln();
            log_min = log_min.min(l);
            log_max = log_max.max(l);
        }
        if !log_min.is_finite() {
            return Err(Error::Domain("empty compute population".into()));
        }
        Ok(Self { log_min, log_max })
    }
}

/// Trust reduction for one role: zero when on time, otherwise the whole
/// actual time (not the excess).
pub fn theta(actual: f64, required: f64) -> f64 {
    if actual <= required {
        0.0
    } else {
        actual
    }
}

pub fn trust_delta(stats: &EpochNodeStats, params: &ScoringParams) -> f64 {
    let reward = params.alpha * (stats.ok_txs as f64 - stats.failed_txs as f64);
    let penalty: f64 = Role::ALL
        .iter()
        .map(|r| {
            let i = r.index();
            theta(stats.role_times[i], stats.role_required[i]) / stats.role_required[i]
        })
        .sum();
    reward - params.beta * penalty
}

pub fn apply_trust(current: f64, delta: f64) -> f64 {
    (current + delta).clamp(TRUST_MIN, TRUST_MAX)
}

/// Sigmoid of online time around the population average.
pub fn f_online(t_online: f64, t_zero: f64) -> f64 {
    1.0 / (1.0 + (-(t_online - t_zero)).exp())
}

/// Min-max normalized log compute capacity. A degenerate population (all
/// capacities equal) scores 1.
pub fn f_compute(c: f64, pop: &PopulationComputeStats) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::Domain(format!("compute capacity {c} must be > 0")));
    }
    let span = pop.log_max - pop.log_min;
    if span <= 0.0 {
        return Ok(1.0);
    }
    Ok(((c.ln() - pop.log_min) / span).clamp(0.0, 1.0))
}

pub fn f_failure(eta: f64, gamma: f64) -> f64 {
    (-eta * gamma).exp()
}

pub fn stability_score(
    ind: &StabilityIndicators,
    params: &ScoringParams,
    pop: &PopulationComputeStats,
) -> Result<f64> {
    let w = params.weights;
    let s = w[0] * f_online(ind.online_time, params.t_zero)
        + w[1] * f_compute(ind.compute_capacity, pop)?
        + w[2] * f_failure(ind.failure_prob, params.gamma);
    Ok(s.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(alpha: f64, beta: f64) -> ScoringParams {
        ScoringParams {
            alpha,
            beta,
            ..ScoringParams::default()
        }
    }

    fn on_time(ok: u64, failed: u64) -> EpochNodeStats {
        EpochNodeStats {
            ok_txs: ok,
            failed_txs: failed,
            role_times: [1.0, 1.0, 1.0],
            role_required: [5.0, 5.0, 5.0],
        }
    }

    #[test]
    fn theta_branches() {
        assert_eq!(theta(3.0, 5.0), 0.0);
        assert_eq!(theta(5.0, 5.0), 0.0);
        assert_eq!(theta(7.0, 5.0), 7.0);
    }

    #[test]
    fn trust_delta_examples() {
        assert_eq!(trust_delta(&on_time(5, 1), &params(1.0, 1.0)), 4.0);
        let mut late = on_time(3, 3);
        late.role_times[Role::Root.index()] = 10.0;
        assert!((trust_delta(&late, &params(1.0, 0.5)) - (-1.0)).abs() < 1e-12);
        assert_eq!(trust_delta(&on_time(0, 0), &params(1.0, 1.0)), 0.0);
    }

    #[test]
    fn trust_delta_linear_in_alpha() {
        let mut s = on_time(12, 4);
        s.role_times = [7.0, 2.0, 9.0];
        let base = trust_delta(&s, &params(0.3, 0.7));
        let doubled = trust_delta(&s, &params(0.6, 0.7));
        let reward = 0.3 * 8.0;
        let penalty = base - reward;
        assert!((doubled - (2.0 * reward + penalty)).abs() < 1e-12);
    }

    #[test]
    fn apply_trust_clamps() {
        assert_eq!(apply_trust(9.5, 4.0), 10.0);
        assert_eq!(apply_trust(0.3, -1.0), 0.0);
        assert!((apply_trust(5.0, 0.7) - 5.7).abs() < 1e-12);
    }

    #[test]
    fn f_online_values() {
        assert_eq!(f_online(10.0, 10.0), 0.5);
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((f_online(12.0, 10.0) - expected).abs() < 1e-12);
        assert!((f_online(12.0, 10.0) - 0.8808).abs() < 1e-4);
        assert!(f_online(1e6, 10.0) > 1.0 - 1e-12);
    }

    #[test]
    fn f_compute_bounds_and_errors() {
        let pop = PopulationComputeStats::from_capacities([1.0, 4.0, 16.0]).unwrap();
        assert_eq!(f_compute(16.0, &pop).unwrap(), 1.0);
        assert_eq!(f_compute(1.0, &pop).unwrap(), 0.0);
        assert!((f_compute(4.0, &pop).unwrap() - 0.5).abs() < 1e-12);
        let flat = PopulationComputeStats::from_capacities([3.0, 3.0]).unwrap();
        assert_eq!(f_compute(3.0, &flat).unwrap(), 1.0);
        assert!(f_compute(0.0, &pop).is_err());
        assert!(f_compute(-1.0, &pop).is_err());
    }

    #[test]
    fn f_failure_values() {
        assert_eq!(f_failure(0.0, 5.0), 1.0);
        assert!((f_failure(std::f64::consts::LN_2, 1.0) - 0.5).abs() < 1e-12);
        assert!((f_failure(0.1, 10.0) - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn stability_reductions_and_mix() {
        let pop = PopulationComputeStats::from_capacities([1.0, std::f64::consts::E]).unwrap();
        let ind = StabilityIndicators {
            online_time: 30.0,
            compute_capacity: 1.0,
            failure_prob: 0.0,
        };
        let mut p = ScoringParams::default();
        p.weights = [1.0, 0.0, 0.0];
        assert_eq!(stability_score(&ind, &p, &pop).unwrap(), 0.5);
        p.weights = [0.0, 0.0, 1.0];
        assert_eq!(stability_score(&ind, &p, &pop).unwrap(), 1.0);

        // Hand arithmetic: online 32 vs t0 30 -> 0.880797; compute e^0.5
        // on [1, e] -> 0.5; eta 0.1 with gamma 5 -> e^-0.5 = 0.606531.
        p.weights = [0.4, 0.35, 0.25];
        let ind = StabilityIndicators {
            online_time: 32.0,
            compute_capacity: 0.5f64.exp(),
            failure_prob: 0.1,
        };
        let expected = 0.4 * 0.880_797_077_977_882_3 + 0.35 * 0.5 + 0.25 * 0.606_530_659_712_633_4;
        assert!((stability_score(&ind, &p, &pop).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn role_times_each_penalized_once() {
        let s = EpochNodeStats {
            ok_txs: 0,
            failed_txs: 0,
            role_times: [6.0, 8.0, 3.0],
            role_required: [5.0, 4.0, 4.0],
        };
        // 6/5 + 8/4 + 0
        assert!((trust_delta(&s, &params(0.0, 1.0)) + 3.2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn theta_is_zero_or_actual(t in 0.0f64..100.0, req in 0.001f64..100.0) {
            let v = theta(t, req);
            prop_assert!(v == 0.0 || v == t);
            prop_assert_eq!(theta(v, req), if v > req { v } else { 0.0 });
        }

        #[test]
        fn apply_trust_stays_in_range(cur in 0.0f64..=10.0, d in -100.0f64..100.0) {
            let t = apply_trust(cur, d);
            prop_assert!((0.0..=10.0).contains(&t));
        }

        #[test]
        fn stability_in_unit_interval(
            online in 0.0f64..1e4, t0 in 0.0f64..1e4, c in 0.01f64..100.0,
            eta in 0.0f64..=1.0, gamma in 0.01f64..50.0,
            w0 in 0.01f64..1.0, w1 in 0.01f64..1.0, w2 in 0.01f64..1.0,
        ) {
            let sum = w0 + w1 + w2;
            let p = ScoringParams { weights: [w0 / sum, w1 / sum, w2 / sum], t_zero: t0, gamma, ..ScoringParams::default() };
            let pop = PopulationComputeStats::from_capacities([0.01, c, 100.0]).unwrap();
            let ind = StabilityIndicators { online_time: online, compute_capacity: c, failure_prob: eta };
            let s = stability_score(&ind, &p, &pop).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }
}
