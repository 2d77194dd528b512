use drdst_core::model::{Position, RsuNode, SimConfig, StabilityIndicators};
use drdst_core::Error;
use proptest::prelude::*;

fn indicators() -> StabilityIndicators {
    StabilityIndicators {
        online_time: 0.0,
        compute_capacity: 1.0,
        failure_prob: 0.1,
    }
}

proptest! {
    #[test]
    fn node_scores_stay_in_range(t0 in -50.0..50.0f64, t1 in -50.0..50.0f64, s in -5.0..5.0f64) {
        let mut n = RsuNode::new(0, Position::new(0.0, 0.0), t0, indicators());
        prop_assert!((0.0..=10.0).contains(&n.trust()));
        n.set_trust(t1);
        n.set_stability(s);
        prop_assert!((0.0..=10.0).contains(&n.trust()));
        prop_assert!((0.0..=1.0).contains(&n.stability()));
    }

    #[test]
    fn out_of_range_rates_name_their_field(rate in prop_oneof![-10.0..-0.001f64, 1.001..10.0f64], which in 0..2usize) {
        let mut cfg = SimConfig::default();
        let field = if which == 0 {
            cfg.byzantine_rate = rate;
            "byzantine_rate"
        } else {
            cfg.offline_rate = rate;
            "offline_rate"
        };
        match cfg.validate() {
            Err(Error::Config { field: f, .. }) => prop_assert_eq!(f, field),
            other => prop_assert!(false, "expected a config error, got {:?}", other),
        }
    }

    #[test]
    fn too_few_rsus_for_the_shards_is_refused(q in 2..40usize, short in 1..3usize) {
        let cfg = SimConfig { shard_count: q, rsu_count: 3 * q - short, ..SimConfig::default() };
        let refused = matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "rsu_count");
        prop_assert!(refused);
    }
}

#[test]
fn config_roundtrips_through_json() {
    let cfg = SimConfig {
        shard_count: 6,
        rng_seed: 77,
        ..SimConfig::default()
    };
    assert_eq!(SimConfig::from_json(&cfg.to_json()).unwrap(), cfg);
}
