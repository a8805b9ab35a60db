//! Constant-bit-rate traffic sources and the data packets they emit.

use crate::engine::{RandomStreams, SimTime, StreamLabel};
use crate::mobility::NodeId;

pub type FlowId = usize;

/// One unidirectional CBR stream: fixed-size packets at a fixed interval
/// over an active window.
#[derive(Debug, Clone, Copy)]
pub struct CbrFlow {
    pub src: NodeId,
    pub dst: NodeId,
    pub packet_bytes: u32,
    pub interval: f64,
    pub start_at: f64,
    pub stop_at: f64,
}

/// Application payload riding inside a data frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataPacket {
    pub flow: FlowId,
    pub seq: u64,
    pub created_at: SimTime,
    pub ttl: u8,
}

/// Draws `flow_count` distinct ordered (src, dst) pairs uniformly from the
/// node set, each with a random phase offset below one interval so the
/// sources do not emit in lockstep. Pure function of the seed.
///
/// The phase keeps every flow's packet count at ⌈window/interval⌉ whenever
/// the window is a whole number of intervals.
pub fn spawn_flows(
    n: u32,
    flow_count: u32,
    packet_bytes: u32,
    rate: f64,
    start_at: f64,
    stop_at: f64,
    streams: &mut RandomStreams,
) -> Vec<CbrFlow> {
    assert!(n >= 2, "flows need at least two nodes");
    assert!(rate > 0.0, "packet rate must be positive");
    assert!(start_at < stop_at, "traffic window out of order");
    let pairs_available = u64::from(n) * u64::from(n - 1);
    assert!(
        u64::from(flow_count) <= pairs_available,
        "{flow_count} flows but only {pairs_available} ordered pairs exist"
    );
    let mut chosen = std::collections::BTreeSet::new();
    let mut flows = Vec::with_capacity(flow_count as usize);
    while flows.len() < flow_count as usize {
        let src = streams.draw_index(StreamLabel::Traffic, u64::from(n)) as NodeId;
        let dst = streams.draw_index(StreamLabel::Traffic, u64::from(n)) as NodeId;
        if src == dst || !chosen.insert((src, dst)) {
            continue;
        }
        let interval = 1.0 / rate;
        let phase = streams.draw_uniform(StreamLabel::Traffic, 0.0, interval);
        flows.push(CbrFlow {
            src,
            dst,
            packet_bytes,
            interval,
            start_at: start_at + phase,
            stop_at,
        });
    }
    flows
}
