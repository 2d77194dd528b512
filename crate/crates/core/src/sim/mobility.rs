use rand::Rng;

use crate::model::{euclidean_distance, NodeId, Position};

/// Random-waypoint vehicle: heads at constant speed towards a uniform
/// destination inside the square area and draws a new one on arrival.
#[derive(Clone, Debug, PartialEq)]
pub struct Vehicle {
    pub id: usize,
    pub position: Position,
    /// Meters per second along each axis.
    pub velocity: (f64, f64),
    pub destination: Position,
    /// Nearest RSU after the last step.
    pub current_rsu: NodeId,
    /// RSU that received this vehicle's previous transaction.
    pub last_tx_rsu: Option<NodeId>,
}

/// Nearest RSU accepted by `allowed`; exact ties go to the lower id.
pub fn nearest_rsu<F>(p: Position, rsus: &[Position], allowed: F) -> Option<NodeId>
where
    F: Fn(NodeId) -> bool,
{
    let mut best: Option<(f64, NodeId)> = None;
    for (i, &r) in rsus.iter().enumerate() {
        if !allowed(i) {
            continue;
        }
        let d = euclidean_distance(p, r);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

#[derive(Clone, Debug)]
pub struct Mobility {
    side_m: f64,
    speed_mps: f64,
    rsus: Vec<Position>,
    vehicles: Vec<Vehicle>,
}

fn uniform_point<R: Rng + ?Sized>(side: f64, rng: &mut R) -> Position {
    Position::new(rng.random_range(0.0..=side), rng.random_range(0.0..=side))
}

impl Mobility {
    pub fn new<R: Rng + ?Sized>(count: usize, side_m: f64, speed_kmh: f64, rsus: Vec<Position>, rng: &mut R) -> Self {
        let speed_mps = speed_kmh / 3.6;
        let mut vehicles = Vec::with_capacity(count);
        for id in 0..count {
            let position = uniform_point(side_m, rng);
            let destination = uniform_point(side_m, rng);
            let current_rsu = nearest_rsu(position, &rsus, |_| true).unwrap_or(0);
            let mut v = Vehicle {
                id,
                position,
                velocity: (0.0, 0.0),
                destination,
                current_rsu,
                last_tx_rsu: None,
            };
            v.velocity = heading(position, destination, speed_mps);
            vehicles.push(v);
        }
        Self {
            side_m,
            speed_mps,
            rsus,
            vehicles,
        }
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn vehicle_mut(&mut self, id: usize) -> &mut Vehicle {
        &mut self.vehicles[id]
    }

    pub fn rsus(&self) -> &[Position] {
        &self.rsus
    }

    /// Advance every vehicle by `dt` seconds and refresh its nearest RSU.
    /// Returns how many vehicles changed RSU.
    pub fn step<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> usize {
        if !(dt > 0.0) || self.speed_mps == 0.0 {
            return 0;
        }
        let mut handoffs = 0;
        for v in &mut self.vehicles {
            let mut left = dt;
            while left > 0.0 {
                let to_go = euclidean_distance(v.position, v.destination);
                let time = to_go / self.speed_mps;
                if time > left {
                    v.position.x += v.velocity.0 * left;
                    v.position.y += v.velocity.1 * left;
                    left = 0.0;
                } else {
                    v.position = v.destination;
                    left -= time;
                    v.destination = uniform_point(self.side_m, rng);
                    v.velocity = heading(v.position, v.destination, self.speed_mps);
                    if v.velocity == (0.0, 0.0) {
                        break;
                    }
                }
            }
            // Reflect off the edges; only rounding can push a vehicle out.
            v.position.x = reflect(v.position.x, self.side_m);
            v.position.y = reflect(v.position.y, self.side_m);
            let now = nearest_rsu(v.position, &self.rsus, |_| true).unwrap_or(v.current_rsu);
            if now != v.current_rsu {
                handoffs += 1;
                v.current_rsu = now;
            }
        }
        handoffs
    }
}

fn heading(from: Position, to: Position, speed: f64) -> (f64, f64) {
    let d = euclidean_distance(from, to);
    if d == 0.0 {
        (0.0, 0.0)
    } else {
        ((to.x - from.x) / d * speed, (to.y - from.y) / d * speed)
    }
}

fn reflect(x: f64, side: f64) -> f64 {
    if x < 0.0 {
        (-x).min(side)
    } else if x > side {
        (2.0 * side - x).max(0.0)
    } else {
        x
    }
}
