//! Node placement and random-waypoint motion over a rectangular area.
//!
//! Positions are never stepped on a timer. Each node owns a lazily extended
//! list of waypoint legs, so `position_at` is a pure function of the scenario
//! seed, the node id, and the query time. A node travels in a straight line
//! to a uniformly drawn destination at a uniformly drawn speed, pauses, and
//! repeats.

use crate::engine::{RandomStreams, SimTime, StreamLabel};

/// Node index within one scenario. Dense, assigned 0..n at setup.
pub type NodeId = u32;

/// A point inside the simulation area, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance_to(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// One straight-line trip (or pause, when `from == to`).
#[derive(Debug, Clone, Copy)]
pub struct WaypointLeg {
    pub from: Position,
    pub to: Position,
    pub depart_at: f64,
    pub arrive_at: f64,
    pub speed: f64,
}

struct NodeMotion {
    legs: Vec<WaypointLeg>,
    /// Motion is fully described up to this time; queries beyond it extend
    /// the leg list first.
    covered_until: f64,
    /// Scripted nodes never draw new legs; they hold their last position.
    scripted: bool,
}

/// Authoritative source of every node's position at any virtual time.
pub struct MobilityModel {
    width: f64,
    height: f64,
    v_min: f64,
    v_max: f64,
    pause: f64,
    nodes: Vec<NodeMotion>,
}

impl MobilityModel {
    /// Places `n` nodes uniformly over the area and prepares their waypoint
    /// streams. With `v_max == 0` every node is static at its initial spot.
    pub fn new(
        n: u32,
        width: f64,
        height: f64,
        v_min: f64,
        v_max: f64,
        pause: f64,
        streams: &mut RandomStreams,
    ) -> MobilityModel {
        assert!(n >= 2, "a scenario needs at least two nodes, got {n}");
        assert!(
            width > 0.0 && height > 0.0,
            "area dimensions must be positive"
        );
        assert!(
            0.0 <= v_min && v_min <= v_max,
            "speed range out of order: [{v_min}, {v_max}]"
        );
        let nodes = (0..n)
            .map(|id| {
                let label = StreamLabel::Mobility(id);
                let start = Position {
                    x: streams.draw_uniform(label, 0.0, width),
                    y: streams.draw_uniform(label, 0.0, height),
                };
                NodeMotion {
                    legs: vec![WaypointLeg {
                        from: start,
                        to: start,
                        depart_at: 0.0,
                        arrive_at: 0.0,
                        speed: 0.0,
                    }],
                    covered_until: 0.0,
                    scripted: v_max == 0.0,
                }
            })
            .collect();
        MobilityModel {
            width,
            height,
            v_min,
            v_max,
            pause,
            nodes,
        }
    }

    /// Builds a model from fixed per-node leg lists; nodes hold their final
    /// position after the last leg. Test and scenario-debugging hook.
    pub fn from_legs(
        width: f64,
        height: f64,
        legs_per_node: Vec<Vec<WaypointLeg>>,
    ) -> MobilityModel {
        assert!(
            legs_per_node.len() >= 2,
            "a scenario needs at least two nodes"
        );
        let nodes = legs_per_node
            .into_iter()
            .map(|legs| {
                assert!(
                    !legs.is_empty(),
                    "each scripted node needs at least one leg"
                );
                NodeMotion {
                    legs,
                    covered_until: f64::INFINITY,
                    scripted: true,
                }
            })
            .collect();
        MobilityModel {
            width,
            height,
            v_min: 0.0,
            v_max: 0.0,
            pause: 0.0,
            nodes,
        }
    }

    pub fn node_count(&self) -> u32 {
        self.nodes.len() as u32
    }

    pub fn area(&self) -> (f64, f64) {
        (self.width, self.height)
    }

    /// The node's position at time `t`, extending its waypoint list as far
    /// as needed.
    pub fn position_at(
        &mut self,
        node: NodeId,
        t: SimTime,
        streams: &mut RandomStreams,
    ) -> Position {
        let t = t.secs();
        self.extend_to(node, t, streams);
        let motion = &self.nodes[node as usize];
        // Last leg covering t wins, so an arrival instant reads the new leg's
        // origin, which coincides with the old leg's destination.
        let idx = motion
            .legs
            .partition_point(|leg| leg.depart_at <= t)
            .saturating_sub(1);
        let leg = &motion.legs[idx];
        if t <= leg.depart_at {
            return leg.from;
        }
        if t >= leg.arrive_at {
            return leg.to;
        }
        let span = leg.arrive_at - leg.depart_at;
        if span <= 0.0 {
            return leg.to;
        }
        let frac = (t - leg.depart_at) / span;
        Position {
            x: leg.from.x + frac * (leg.to.x - leg.from.x),
            y: leg.from.y + frac * (leg.to.y - leg.from.y),
        }
    }

    /// Euclidean distance between two nodes at time `t`.
    pub fn distance(
        &mut self,
        a: NodeId,
        b: NodeId,
        t: SimTime,
        streams: &mut RandomStreams,
    ) -> f64 {
        let pa = self.position_at(a, t, streams);
        let pb = self.position_at(b, t, streams);
        pa.distance_to(pb)
    }

    /// Every travel leg realized so far, for the waypoint trace.
    pub fn realized_legs(&self, node: NodeId) -> impl Iterator<Item = &WaypointLeg> {
        self.nodes[node as usize]
            .legs
            .iter()
            .filter(|leg| leg.speed > 0.0)
    }

    fn extend_to(&mut self, node: NodeId, t: f64, streams: &mut RandomStreams) {
        let motion = &mut self.nodes[node as usize];
        if motion.scripted {
            return;
        }
        let label = StreamLabel::Mobility(node);
        while motion.covered_until < t {
            let here = motion.legs.last().expect("leg list starts nonempty").to;
            let depart = motion.covered_until;
            let to = Position {
                x: streams.draw_uniform(label, 0.0, self.width),
                y: streams.draw_uniform(label, 0.0, self.height),
            };
            let dist = here.distance_to(to);
            if dist > 0.0 {
                let speed = if self.v_min < self.v_max {
                    streams.draw_uniform(label, self.v_min, self.v_max)
                } else {
                    self.v_min
                };
                let arrive = depart + dist / speed;
                motion.legs.push(WaypointLeg {
                    from: here,
                    to,
                    depart_at: depart,
                    arrive_at: arrive,
                    speed,
                });
                motion.covered_until = arrive;
            }
            if self.pause > 0.0 {
                let depart = motion.covered_until;
                motion.legs.push(WaypointLeg {
                    from: to,
                    to,
                    depart_at: depart,
                    arrive_at: depart + self.pause,
                    speed: 0.0,
                });
                motion.covered_until += self.pause;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(n: u32, seed: u64) -> (MobilityModel, RandomStreams) {
        let mut streams = RandomStreams::new(seed);
        let m = MobilityModel::new(n, 800.0, 800.0, 1.0, 40.0, 0.0, &mut streams);
        (m, streams)
    }

    #[test]
    fn initial_positions_fall_inside_the_area() {
        let (mut m, mut s) = model(10, 3);
        for node in 0..10 {
            let p = m.position_at(node, SimTime::ZERO, &mut s);
            assert!((0.0..=800.0).contains(&p.x));
            assert!((0.0..=800.0).contains(&p.y));
        }
    }

    #[test]
    #[should_panic(expected = "at least two nodes")]
    fn single_node_scenario_is_rejected() {
        let mut s = RandomStreams::new(1);
        MobilityModel::new(1, 800.0, 800.0, 1.0, 40.0, 0.0, &mut s);
    }

    #[test]
    fn fixed_seed_reproduces_positions() {
        let (mut m1, mut s1) = model(10, 42);
        let (mut m2, mut s2) = model(10, 42);
        for node in 0..10 {
            for t in [0.0, 12.5, 100.0, 777.3] {
                let a = m1.position_at(node, SimTime::from_secs(t), &mut s1);
                let b = m2.position_at(node, SimTime::from_secs(t), &mut s2);
                assert_eq!((a.x, a.y), (b.x, b.y));
            }
        }
    }

    #[test]
    fn linear_motion_interpolates_halfway() {
        let leg = WaypointLeg {
            from: Position { x: 0.0, y: 0.0 },
            to: Position { x: 100.0, y: 0.0 },
            depart_at: 0.0,
            arrive_at: 10.0,
            speed: 10.0,
        };
        let mut m = MobilityModel::from_legs(800.0, 800.0, vec![vec![leg], vec![leg]]);
        let mut s = RandomStreams::new(0);
        let p = m.position_at(0, SimTime::from_secs(5.0), &mut s);
        assert_eq!((p.x, p.y), (50.0, 0.0));
    }

    #[test]
    fn arrival_instant_reads_the_destination() {
        let (mut m, mut s) = model(2, 9);
        // Walk forward until just past the first travel leg's arrival.
        m.position_at(0, SimTime::from_secs(2000.0), &mut s);
        let arrive = m.nodes[0].legs[1].arrive_at;
        let dest = m.nodes[0].legs[1].to;
        let p = m.position_at(0, SimTime::from_secs(arrive), &mut s);
        assert_eq!((p.x, p.y), (dest.x, dest.y));
    }

    #[test]
    fn static_nodes_never_move() {
        let mut s = RandomStreams::new(4);
        let mut m = MobilityModel::new(5, 800.0, 800.0, 0.0, 0.0, 0.0, &mut s);
        let at_zero = m.position_at(3, SimTime::ZERO, &mut s);
        let later = m.position_at(3, SimTime::from_secs(500.0), &mut s);
        assert_eq!((at_zero.x, at_zero.y), (later.x, later.y));
    }

    #[test]
    fn coincident_nodes_have_zero_distance() {
        let leg = WaypointLeg {
            from: Position { x: 7.0, y: 7.0 },
            to: Position { x: 7.0, y: 7.0 },
            depart_at: 0.0,
            arrive_at: 0.0,
            speed: 0.0,
        };
        let mut m = MobilityModel::from_legs(800.0, 800.0, vec![vec![leg], vec![leg]]);
        let mut s = RandomStreams::new(0);
        assert_eq!(m.distance(0, 1, SimTime::from_secs(3.0), &mut s), 0.0);
    }

    #[test]
    fn three_four_five_triangle() {
        let a = WaypointLeg {
            from: Position { x: 0.0, y: 0.0 },
            to: Position { x: 0.0, y: 0.0 },
            depart_at: 0.0,
            arrive_at: 0.0,
            speed: 0.0,
        };
        let mut b = a;
        b.from = Position { x: 3.0, y: 4.0 };
        b.to = b.from;
        let mut m = MobilityModel::from_legs(800.0, 800.0, vec![vec![a], vec![b]]);
        let mut s = RandomStreams::new(0);
        assert_eq!(m.distance(0, 1, SimTime::ZERO, &mut s), 5.0);
    }

    proptest! {
        #[test]
        fn positions_stay_inside_the_area(seed in 0u64..1000, node in 0u32..8, t in 0.0f64..2000.0) {
            let (mut m, mut s) = model(8, seed);
            let p = m.position_at(node, SimTime::from_secs(t), &mut s);
            prop_assert!((0.0..=800.0).contains(&p.x));
            prop_assert!((0.0..=800.0).contains(&p.y));
        }

        #[test]
        fn distance_is_symmetric(seed in 0u64..1000, t in 0.0f64..500.0) {
            let (mut m, mut s) = model(4, seed);
            let ab = m.distance(0, 1, SimTime::from_secs(t), &mut s);
            let ba = m.distance(1, 0, SimTime::from_secs(t), &mut s);
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn displacement_never_exceeds_v_max(seed in 0u64..500, t1 in 0.0f64..900.0, dt in 1e-3f64..50.0) {
            let (mut m, mut s) = model(3, seed);
            let p1 = m.position_at(0, SimTime::from_secs(t1), &mut s);
            let p2 = m.position_at(0, SimTime::from_secs(t1 + dt), &mut s);
            let speed = p1.distance_to(p2) / dt;
            prop_assert!(speed <= 40.0 + 1e-9, "observed speed {}", speed);
        }
    }
}
