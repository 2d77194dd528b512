use std::collections::HashSet;
use std::sync::Arc;

use drdst_core::hashgraph::{create_event, global_order, DagView, Event, EventHash, Transaction, TxKind};
use drdst_core::model::seeded_rng;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn tx(id: u64, key: Option<u64>) -> Transaction {
    Transaction {
        id,
        vehicle: 0,
        origin_rsu: 0,
        origin_shard: 0,
        submit_time: 0.0,
        kind: TxKind::Normal,
        conflict_key: key,
        counterpart_rsu: None,
    }
}

/// Events of `u` honest members syncing with random peers. Every third
/// transaction shares a conflict key with its predecessor.
fn history(u: usize, steps: usize, seed: u64) -> Vec<Arc<Event>> {
    let mut rng = seeded_rng(seed);
    let ids: Vec<usize> = (0..u).collect();
    let mut view = DagView::new(&ids, 0, 8).unwrap();
    let mut out = Vec::new();
    for k in 0..steps as u64 {
        let c = rng.random_range(0..u);
        let op = view.latest((c + rng.random_range(1..u)) % u);
        let key = match k % 3 {
            1 => Some(k),
            2 => Some(k - 1),
            _ => None,
        };
        out.extend(create_event(&mut view, c, op, vec![tx(k, key)], k as f64).unwrap());
    }
    out
}

fn fresh(u: usize) -> DagView {
    DagView::new(&(0..u).collect::<Vec<_>>(), 0, 8).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn delivery_order_does_not_change_the_view(u in 3..6usize, steps in 1..60usize, seed in any::<u64>()) {
        let events = history(u, steps, seed);
        let mut a = fresh(u);
        for e in &events {
            a.insert_event(e.clone()).unwrap();
        }
        let mut shuffled = events.clone();
        shuffled.shuffle(&mut seeded_rng(seed ^ 0x5eed));
        let mut b = fresh(u);
        for e in shuffled {
            b.insert_event(e).unwrap();
        }
        prop_assert_eq!(b.buffered_len(), 0);
        prop_assert_eq!(a.fingerprint(), b.fingerprint());
        a.commit_pass(0.0);
        b.commit_pass(0.0);
        prop_assert_eq!(global_order(&a.settled_commits()), global_order(&b.settled_commits()));
    }

    #[test]
    fn stored_events_are_topologically_ordered(u in 3..6usize, steps in 1..60usize, seed in any::<u64>()) {
        let mut events = history(u, steps, seed);
        events.shuffle(&mut seeded_rng(seed));
        let mut v = fresh(u);
        for e in events {
            v.insert_event(e).unwrap();
        }
        let mut seen: HashSet<EventHash> = HashSet::new();
        for e in v.events() {
            for p in [e.self_parent(), e.other_parent()].into_iter().flatten() {
                prop_assert!(seen.contains(&p));
            }
            seen.insert(e.hash());
        }
    }

    #[test]
    fn commits_only_grow_and_never_conflict(u in 4..6usize, steps in 10..80usize, seed in any::<u64>()) {
        let events = history(u, steps, seed);
        let mut v = fresh(u);
        let mut prev: Vec<EventHash> = Vec::new();
        for (i, e) in events.into_iter().enumerate() {
            v.insert_event(e).unwrap();
            v.commit_pass(i as f64);
            let now: Vec<EventHash> = v.committed().iter().map(|c| c.event.hash()).collect();
            prop_assert!(now.starts_with(&prev));
            prev = now;
        }
        let mut keys = HashSet::new();
        for c in v.committed() {
            for t in c.event.txs() {
                if let Some(k) = t.conflict_key {
                    prop_assert!(keys.insert(k), "two commits share key {}", k);
                }
            }
        }
    }
}
