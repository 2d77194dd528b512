use rand::Rng;

/// Fault flags drawn at the start of an epoch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaultDraw {
    pub byzantine: Vec<bool>,
    pub offline: Vec<bool>,
}

/// Byzantine flags are sticky: a node already Byzantine stays so, others
/// turn Byzantine only when `previous` is `None` (the first epoch). Offline
/// flags are redrawn every epoch. Each node consumes exactly two draws so
/// the stream stays aligned whatever the outcome.
pub fn inject_faults<R: Rng + ?Sized>(
    nodes: usize,
    byzantine_rate: f64,
    offline_rate: f64,
    previous: Option<&[bool]>,
    rng: &mut R,
) -> FaultDraw {
    let mut byzantine = Vec::with_capacity(nodes);
    let mut offline = Vec::with_capacity(nodes);
    for i in 0..nodes {
        let b: f64 = rng.random();
        let o: f64 = rng.random();
        byzantine.push(match previous {
            Some(prev) => prev[i],
            None => b < byzantine_rate,
        });
        offline.push(o < offline_rate);
    }
    FaultDraw { byzantine, offline }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SeedSource;

    #[test]
    fn zero_rates_leave_everyone_healthy() {
        let mut rng = SeedSource::new(1).stream("faults");
        let d = inject_faults(100, 0.0, 0.0, None, &mut rng);
        assert!(d.byzantine.iter().all(|b| !b) && d.offline.iter().all(|o| !o));
    }

    #[test]
    fn byzantine_count_averages_the_rate() {
        let src = SeedSource::new(5);
        let n = 500;
        let total: usize = (0..n)
            .map(|i| {
                let mut rng = src.indexed("faults", i);
                inject_faults(100, 0.15, 0.0, None, &mut rng).byzantine.iter().filter(|&&b| b).count()
            })
            .sum();
        let mean = total as f64 / n as f64;
        // Binomial(100, 0.15) has sd 3.57, so the mean's sd is 0.16.
        assert!((mean - 15.0).abs() < 0.6, "mean {mean}");
    }

    #[test]
    fn byzantine_flags_are_sticky_and_offline_redrawn() {
        let mut rng = SeedSource::new(7).stream("faults");
        let first = inject_faults(200, 0.3, 0.3, None, &mut rng);
        let second = inject_faults(200, 0.9, 0.3, Some(&first.byzantine), &mut rng);
        assert_eq!(first.byzantine, second.byzantine);
        assert_ne!(first.offline, second.offline);
    }
}
