use rand::Rng;
use rand_distr::{Distribution, Exp};

/// A transaction request: when and from which vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub vehicle: usize,
}

/// Poisson request stream at an aggregate rate, each request from a
/// uniformly random vehicle.
#[derive(Clone, Debug)]
pub struct ArrivalProcess {
    gap: Option<Exp<f64>>,
    vehicles: usize,
    next: f64,
}

impl ArrivalProcess {
    pub fn new<R: Rng + ?Sized>(rate_tps: f64, vehicles: usize, start: f64, rng: &mut R) -> Self {
        let gap = (rate_tps > 0.0 && vehicles > 0).then(|| Exp::new(rate_tps).expect("positive rate"));
        let mut p = Self {
            gap,
            vehicles,
            next: f64::INFINITY,
        };
        if let Some(g) = &p.gap {
            p.next = start + g.sample(rng);
        }
        p
    }

    /// Time of the next arrival, infinite for a zero rate.
    pub fn peek(&self) -> f64 {
        self.next
    }

    /// Arrivals strictly before `until`, in time order.
    pub fn take_until<R: Rng + ?Sized>(&mut self, until: f64, rng: &mut R) -> Vec<Arrival> {
        let mut out = Vec::new();
        let Some(g) = self.gap else {
            return out;
        };
        while self.next < until {
            out.push(Arrival {
                time: self.next,
                vehicle: rng.random_range(0..self.vehicles),
            });
            self.next += g.sample(rng);
        }
        out
    }
}

/// Arrivals in `[start, start + dt)`.
pub fn generate_transactions<R: Rng + ?Sized>(rate_tps: f64, start: f64, dt: f64, vehicles: usize, rng: &mut R) -> Vec<Arrival> {
    ArrivalProcess::new(rate_tps, vehicles, start, rng).take_until(start + dt, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SeedSource;

    #[test]
    fn zero_rate_yields_nothing() {
        let mut rng = SeedSource::new(1).stream("traffic");
        assert!(generate_transactions(0.0, 0.0, 100.0, 10, &mut rng).is_empty());
    }

    #[test]
    fn counts_have_poisson_moments() {
        let src = SeedSource::new(9);
        let n = 400;
        let counts: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = src.indexed("traffic", i);
                generate_transactions(3000.0, 0.0, 1.0, 50, &mut rng).len() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Standard error of the mean is about 2.7; of the variance about 212.
        assert!((mean - 3000.0).abs() < 15.0, "mean {mean}");
        assert!((var / 3000.0 - 1.0).abs() < 0.25, "var {var}");
    }

    #[test]
    fn arrivals_are_ordered_inside_the_window() {
        let mut rng = SeedSource::new(3).stream("traffic");
        let a = generate_transactions(500.0, 2.0, 3.0, 7, &mut rng);
        assert!(a.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(a.iter().all(|x| (2.0..5.0).contains(&x.time) && x.vehicle < 7));
    }
}
