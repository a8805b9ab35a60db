//! On-demand route discovery state: routing and neighbor tables, the
//! duplicate-RREQ cache, and the density-driven forwarding gate applied by
//! intermediate nodes when the extension is enabled.
//!
//! This module holds per-node state and pure decision rules; the event loop
//! in `sim` drives them and moves frames around.

use std::collections::BTreeMap;

use crate::engine::{RandomStreams, StreamLabel};
use crate::mobility::NodeId;

/// Route request, flooded network-wide until someone can answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rreq {
    pub originator: NodeId,
    pub originator_seq: u32,
    pub rreq_id: u32,
    pub destination: NodeId,
    /// Destination sequence number the originator last knew, if any.
    pub dest_seq_known: Option<u32>,
    pub hop_count: u8,
}

/// Route reply, unicast hop-by-hop back along the reverse route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rrep {
    /// The RREQ originator this reply is heading for.
    pub originator: NodeId,
    pub destination: NodeId,
    pub dest_seq: u32,
    pub hop_count: u8,
    pub lifetime: f64,
}

/// Route error: destinations that became unreachable, with their bumped
/// sequence numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Rerr {
    pub unreachable: Vec<(NodeId, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteEntry {
    pub next_hop: NodeId,
    pub hop_count: u8,
    pub dest_seq: Option<u32>,
    pub expires_at: f64,
    pub valid: bool,
}

/// Destination → next-hop table with standard freshness rules: a higher
/// destination sequence number always wins; ties go to fewer hops.
#[derive(Debug, Default)]
pub struct RoutingTable {
    entries: BTreeMap<NodeId, RouteEntry>,
}

impl RoutingTable {
    pub fn valid_route(&self, dest: NodeId, now: f64) -> Option<&RouteEntry> {
        self.entries
            .get(&dest)
            .filter(|e| e.valid && e.expires_at > now)
    }

    pub fn last_known_seq(&self, dest: NodeId) -> Option<u32> {
        self.entries.get(&dest).and_then(|e| e.dest_seq)
    }

    /// Installs or refreshes a route if the offered one is fresher (higher
    /// seq) or as fresh and shorter. Returns whether the table changed.
    pub fn consider_update(
        &mut self,
        dest: NodeId,
        next_hop: NodeId,
        hop_count: u8,
        dest_seq: Option<u32>,
        now: f64,
        lifetime: f64,
    ) -> bool {
        let accept = match self.entries.get(&dest) {
            None => true,
            Some(e) => match (dest_seq, e.dest_seq) {
                (Some(new), Some(old)) => {
                    new > old
                        || (new == old
                            && (!e.valid || e.expires_at <= now || hop_count < e.hop_count))
                }
                (Some(_), None) => true,
                (None, _) => !e.valid || e.expires_at <= now,
            },
        };
        if accept {
            self.entries.insert(
                dest,
                RouteEntry {
                    next_hop,
                    hop_count,
                    dest_seq,
                    expires_at: now + lifetime,
                    valid: true,
                },
            );
        }
        accept
    }

    /// Pushes an active route's expiry forward; used on every forwarding hop.
    pub fn refresh(&mut self, dest: NodeId, now: f64, lifetime: f64) {
        if let Some(e) = self.entries.get_mut(&dest) {
            if e.valid {
                e.expires_at = e.expires_at.max(now + lifetime);
            }
        }
    }

    /// Invalidates every valid route whose next hop is `gone`, bumping each
    /// destination's sequence number. Returns what an RERR should report.
    pub fn invalidate_via(&mut self, gone: NodeId) -> Vec<(NodeId, u32)> {
        let mut reported = Vec::new();
        for (&dest, e) in self.entries.iter_mut() {
            if e.valid && e.next_hop == gone {
                e.valid = false;
                let seq = e.dest_seq.map_or(1, |s| s + 1);
                e.dest_seq = Some(seq);
                reported.push((dest, seq));
            }
        }
        reported
    }

    /// Applies a received RERR: invalidates routes to the reported
    /// destinations that run through `from` and are not fresher than the
    /// report. Returns the subset actually invalidated here, which is what
    /// propagates further (re-propagation stops once nothing changes).
    pub fn invalidate_reported(
        &mut self,
        from: NodeId,
        reported: &[(NodeId, u32)],
    ) -> Vec<(NodeId, u32)> {
        let mut invalidated = Vec::new();
        for &(dest, seq) in reported {
            if let Some(e) = self.entries.get_mut(&dest) {
                if e.valid && e.next_hop == from && e.dest_seq.is_none_or(|s| seq >= s) {
                    e.valid = false;
                    e.dest_seq = Some(seq);
                    invalidated.push((dest, seq));
                }
            }
        }
        invalidated
    }

    /// Marks expired routes invalid (quietly; expiry is not a link break).
    pub fn expire(&mut self, now: f64) {
        for e in self.entries.values_mut() {
            if e.valid && e.expires_at <= now {
                e.valid = false;
            }
        }
    }

    pub fn entry(&self, dest: NodeId) -> Option<&RouteEntry> {
        self.entries.get(&dest)
    }
}

/// One-hop neighbor set with last-heard timestamps; any decoded frame from a
/// neighbor refreshes it.
#[derive(Debug, Default)]
pub struct NeighborTable {
    last_heard: BTreeMap<NodeId, f64>,
}

impl NeighborTable {
    pub fn heard(&mut self, neighbor: NodeId, t: f64) {
        let slot = self.last_heard.entry(neighbor).or_insert(t);
        *slot = slot.max(t);
    }

    /// Whether `neighbor` has been heard within the freshness window; the
    /// link-liveness test applied before handing a frame to a next hop.
    pub fn is_fresh(&self, neighbor: NodeId, t: f64, window: f64) -> bool {
        self.last_heard
            .get(&neighbor)
            .is_some_and(|&heard| heard >= t - window)
    }

    /// β: neighbors heard within the freshness window ending at `t`.
    pub fn count_fresh(&self, t: f64, window: f64) -> u32 {
        self.last_heard
            .values()
            .filter(|&&heard| heard >= t - window)
            .count() as u32
    }

    /// Drops entries staler than the window and returns them (lost links).
    pub fn expire(&mut self, t: f64, window: f64) -> Vec<NodeId> {
        let cutoff = t - window;
        let lost: Vec<NodeId> = self
            .last_heard
            .iter()
            .filter(|(_, &heard)| heard < cutoff)
            .map(|(&id, _)| id)
            .collect();
        for id in &lost {
            self.last_heard.remove(id);
        }
        lost
    }
}

/// Remembers which (originator, rreq_id) floods a node has already handled.
/// An entry means "seen", not "forwarded": a gated-out RREQ is still a
/// duplicate on second receipt, so the gate probability is never re-rolled.
#[derive(Debug, Default)]
pub struct RreqSeenCache {
    seen: BTreeMap<(NodeId, u32), f64>,
}

impl RreqSeenCache {
    /// True exactly once per key; later calls are duplicates and do not
    /// refresh the insertion time.
    pub fn first_time(&mut self, originator: NodeId, rreq_id: u32, t: f64) -> bool {
        match self.seen.entry((originator, rreq_id)) {
            std::collections::btree_map::Entry::Occupied(_) => false,
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(t);
                true
            }
        }
    }

    pub fn prune(&mut self, before: f64) {
        self.seen.retain(|_, &mut at| at >= before);
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// Parameters of the density-driven forwarding gate. Whether the gate runs
/// at all is the scenario's protocol choice, not a field here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtParams {
    /// Neighbor count at or below which a node always forwards.
    pub d: u32,
    /// Control factor scaling the forwarding probability, in (0, 1].
    pub c_f: f64,
}

impl Default for ExtParams {
    fn default() -> Self {
        ExtParams { d: 5, c_f: 1.0 }
    }
}

/// Forwarding probability in percent for a node denser than the threshold:
/// (100 / β) · d · c_f. Callers must short-circuit β ≤ d themselves.
pub fn forwarding_probability(beta: u32, d: u32, c_f: f64) -> f64 {
    assert!(beta > d, "gate contract violation: beta {beta} <= d {d}");
    assert!(0.0 < c_f && c_f <= 1.0, "c_f out of (0, 1]: {c_f}");
    100.0 / beta as f64 * (d as f64 * c_f)
}

/// The gate comparison itself: forward only when the draw falls strictly
/// below the probability, so R = p_i drops.
pub fn gate_passes(p_percent: f64, r: f64) -> bool {
    r < p_percent
}

/// Outcome of one gate evaluation, with the evidence for the decision trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateOutcome {
    /// β ≤ d: sparse neighborhood, forwarded unconditionally, no draw made.
    ForwardSparse { beta: u32 },
    /// β > d and the draw passed.
    Forward { beta: u32, p: f64, r: f64 },
    /// β > d and the draw failed; the RREQ dies here.
    Drop { beta: u32, p: f64, r: f64 },
}

impl GateOutcome {
    pub fn forwards(&self) -> bool {
        !matches!(self, GateOutcome::Drop { .. })
    }
}

/// Evaluates the gate for an intermediate node with `beta` fresh neighbors.
/// Sparse nodes never consume a random draw, which keeps the ext-gate stream
/// aligned across scenarios that differ only in dense-node decisions.
pub fn ext_forward_decision(
    beta: u32,
    params: &ExtParams,
    streams: &mut RandomStreams,
) -> GateOutcome {
    if beta <= params.d {
        return GateOutcome::ForwardSparse { beta };
    }
    let p = forwarding_probability(beta, params.d, params.c_f);
    let r = streams.draw_uniform(StreamLabel::ExtGate, 0.0, 100.0);
    if gate_passes(p, r) {
        GateOutcome::Forward { beta, p, r }
    } else {
        GateOutcome::Drop { beta, p, r }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn probability_matches_hand_evaluation() {
        assert!((forwarding_probability(10, 5, 1.0) - 50.0).abs() < 1e-9);
        assert!((forwarding_probability(50, 5, 0.5) - 5.0).abs() < 1e-9);
        assert!((forwarding_probability(6, 5, 1.0) - 500.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    #[should_panic(expected = "gate contract violation")]
    fn probability_rejects_sparse_beta() {
        forwarding_probability(5, 5, 1.0);
    }

    #[test]
    fn gate_boundary_is_strict() {
        assert!(gate_passes(50.0, 49.9));
        assert!(!gate_passes(50.0, 50.0));
        assert!(!gate_passes(25.0, 80.0));
    }

    #[test]
    fn sparse_decision_consumes_no_draw() {
        let mut s = RandomStreams::new(1);
        let params = ExtParams { d: 5, c_f: 1.0 };
        let outcome = ext_forward_decision(4, &params, &mut s);
        assert_eq!(outcome, GateOutcome::ForwardSparse { beta: 4 });
        assert_eq!(s.draw_count(StreamLabel::ExtGate), 0);
        ext_forward_decision(10, &params, &mut s);
        assert_eq!(s.draw_count(StreamLabel::ExtGate), 1);
    }

    #[test]
    fn fresher_sequence_wins() {
        let mut table = RoutingTable::default();
        assert!(table.consider_update(9, 1, 3, Some(5), 0.0, 10.0));
        // Stale offer: lower sequence number.
        assert!(!table.consider_update(9, 2, 1, Some(4), 0.0, 10.0));
        assert_eq!(table.valid_route(9, 0.0).unwrap().next_hop, 1);
        // Fresher offer replaces even a longer-lived shorter route.
        assert!(table.consider_update(9, 3, 7, Some(6), 0.0, 10.0));
        assert_eq!(table.valid_route(9, 0.0).unwrap().next_hop, 3);
    }

    #[test]
    fn equal_sequence_prefers_fewer_hops() {
        let mut table = RoutingTable::default();
        table.consider_update(9, 1, 4, Some(5), 0.0, 10.0);
        assert!(!table.consider_update(9, 2, 4, Some(5), 0.0, 10.0));
        assert!(table.consider_update(9, 2, 2, Some(5), 0.0, 10.0));
        assert_eq!(table.valid_route(9, 0.0).unwrap().hop_count, 2);
    }

    #[test]
    fn expired_routes_are_not_valid() {
        let mut table = RoutingTable::default();
        table.consider_update(9, 1, 3, Some(5), 0.0, 10.0);
        assert!(table.valid_route(9, 5.0).is_some());
        assert!(table.valid_route(9, 10.0).is_none());
        // An equally fresh offer may replace an expired entry.
        assert!(table.consider_update(9, 2, 3, Some(5), 12.0, 10.0));
    }

    #[test]
    fn link_break_invalidates_and_bumps_sequences() {
        let mut table = RoutingTable::default();
        table.consider_update(7, 4, 2, Some(10), 0.0, 100.0);
        table.consider_update(8, 4, 3, Some(20), 0.0, 100.0);
        table.consider_update(9, 5, 1, Some(30), 0.0, 100.0);
        let reported = table.invalidate_via(4);
        assert_eq!(reported, vec![(7, 11), (8, 21)]);
        assert!(table.valid_route(7, 1.0).is_none());
        assert!(table.valid_route(9, 1.0).is_some());
    }

    #[test]
    fn rerr_propagates_only_what_it_invalidates() {
        let mut table = RoutingTable::default();
        table.consider_update(7, 4, 2, Some(10), 0.0, 100.0);
        table.consider_update(8, 6, 2, Some(10), 0.0, 100.0);
        let inv = table.invalidate_reported(4, &[(7, 11), (8, 11)]);
        // Route to 8 goes via node 6, not via the reporter.
        assert_eq!(inv, vec![(7, 11)]);
        // A second identical report changes nothing, so propagation stops.
        assert!(table.invalidate_reported(4, &[(7, 11)]).is_empty());
    }

    #[test]
    fn neighbor_count_respects_freshness_window() {
        let mut nt = NeighborTable::default();
        nt.heard(1, 0.0);
        nt.heard(2, 1.0);
        nt.heard(3, 2.0);
        assert_eq!(nt.count_fresh(2.0, 2.5), 3);
        assert_eq!(nt.count_fresh(3.0, 2.5), 2);
        assert_eq!(nt.count_fresh(10.0, 2.5), 0);
        let lost = nt.expire(3.0, 2.5);
        assert_eq!(lost, vec![1]);
    }

    #[test]
    fn seen_cache_admits_each_flood_once() {
        let mut cache = RreqSeenCache::default();
        assert!(cache.first_time(3, 17, 1.0));
        assert!(!cache.first_time(3, 17, 2.0));
        assert!(cache.first_time(3, 18, 2.0));
        cache.prune(1.5);
        assert_eq!(cache.len(), 1);
    }

    proptest! {
        #[test]
        fn probability_stays_strictly_inside_percent_range(
            d in 1u32..30,
            extra in 1u32..100,
            c_f in 0.01f64..=1.0,
        ) {
            let beta = d + extra;
            let p = forwarding_probability(beta, d, c_f);
            prop_assert!(p > 0.0 && p < 100.0, "p = {}", p);
        }

        #[test]
        fn gate_forward_fraction_tracks_probability(seed in 0u64..50) {
            let mut s = RandomStreams::new(seed);
            let params = ExtParams { d: 5, c_f: 1.0 };
            let n = 2000;
            let mut forwards = 0;
            for _ in 0..n {
                if ext_forward_decision(10, &params, &mut s).forwards() {
                    forwards += 1;
                }
            }
            let frac = forwards as f64 / n as f64;
            // 4σ band around p = 0.5 for 2000 Bernoulli trials.
            prop_assert!((frac - 0.5).abs() < 4.0 * (0.25f64 / n as f64).sqrt() + 0.005);
        }
    }
}
