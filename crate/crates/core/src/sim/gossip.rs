use rand::seq::index::sample;
use rand::Rng;

/// Synchronous push-gossip plan over local member indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GossipSchedule {
    /// Sends `(from, to)` of each round, duplicates included.
    pub rounds: Vec<Vec<(usize, usize)>>,
    /// Round after which each member first holds the message; `Some(0)`
    /// for initial holders.
    pub informed_after: Vec<Option<usize>>,
}

impl GossipSchedule {
    pub fn sends(&self) -> usize {
        self.rounds.iter().map(Vec::len).sum()
    }

    pub fn all_informed(&self) -> bool {
        self.informed_after.iter().all(Option::is_some)
    }
}

/// Every informed member that relays pushes to `k` distinct peers drawn
/// uniformly from the other members, since it cannot know who already
/// holds the message. Stops once everyone is informed or after `cap`
/// rounds.
pub fn gossip_dissemination<R: Rng + ?Sized>(
    informed: &[bool],
    relays: &[bool],
    k: usize,
    cap: usize,
    rng: &mut R,
) -> GossipSchedule {
    let n = informed.len();
    let mut informed_after: Vec<Option<usize>> = informed.iter().map(|&i| i.then_some(0)).collect();
    let mut rounds = Vec::new();
    let k = k.min(n.saturating_sub(1));
    while rounds.len() < cap && informed_after.iter().any(Option::is_none) {
        let r = rounds.len() + 1;
        let senders: Vec<usize> = (0..n).filter(|&i| informed_after[i].is_some() && relays[i]).collect();
        if senders.is_empty() || k == 0 {
            break;
        }
        let mut sends = Vec::with_capacity(senders.len() * k);
        for s in senders {
            for j in sample(rng, n - 1, k) {
                let to = if j >= s { j + 1 } else { j };
                sends.push((s, to));
            }
        }
        for &(_, to) in &sends {
            informed_after[to].get_or_insert(r);
        }
        rounds.push(sends);
    }
    GossipSchedule { rounds, informed_after }
}
