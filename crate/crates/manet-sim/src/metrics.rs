//! Running counters for one simulation and the five headline metrics
//! derived from them at the end of the run.

use std::collections::HashSet;

use crate::radio::EnergyLedger;
use crate::traffic::FlowId;

/// Why a data packet was lost. Control-frame losses are not packet drops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropCause {
    /// Tail-dropped at a full MAC interface queue.
    QueueFull,
    /// Frame corrupted by an overlapping transmission at the next hop.
    Collision,
    /// Route discovery failed, or a transit node had no usable route.
    NoRoute,
    /// Aged out of (or rejected by) the pre-discovery packet buffer.
    BufferTimeout,
    /// Hop limit exhausted.
    Ttl,
    /// Lost with a node that ran out of energy.
    NodeDead,
}

impl DropCause {
    pub const ALL: [DropCause; 6] = [
        DropCause::QueueFull,
        DropCause::Collision,
        DropCause::NoRoute,
        DropCause::BufferTimeout,
        DropCause::Ttl,
        DropCause::NodeDead,
    ];

    fn index(self) -> usize {
        match self {
            DropCause::QueueFull => 0,
            DropCause::Collision => 1,
            DropCause::NoRoute => 2,
            DropCause::BufferTimeout => 3,
            DropCause::Ttl => 4,
            DropCause::NodeDead => 5,
        }
    }
}

/// Control-message transmissions by type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ControlTx {
    pub rreq: u64,
    pub rrep: u64,
    pub rerr: u64,
    pub hello: u64,
}

impl ControlTx {
    pub fn total(&self) -> u64 {
        self.rreq + self.rrep + self.rerr + self.hello
    }
}

/// Mutable counters updated while the simulation runs.
#[derive(Debug, Default)]
pub struct MetricsAccumulator {
    pub generated: u64,
    pub delivered: u64,
    dropped: [u64; 6],
    pub mac_frames_tx: u64,
    pub control_tx: ControlTx,
    pub control_rx: u64,
    pub delay_sum: f64,
    delivered_seen: HashSet<(FlowId, u64)>,
}

impl MetricsAccumulator {
    pub fn drop_packet(&mut self, cause: DropCause) {
        self.dropped[cause.index()] += 1;
    }

    pub fn dropped(&self, cause: DropCause) -> u64 {
        self.dropped[cause.index()]
    }

    pub fn dropped_total(&self) -> u64 {
        self.dropped.iter().sum()
    }

    /// Records a packet reaching its flow's destination. Duplicate arrivals
    /// of the same (flow, seq) are ignored. Returns whether it counted.
    pub fn deliver(&mut self, flow: FlowId, seq: u64, delay: f64) -> bool {
        if !self.delivered_seen.insert((flow, seq)) {
            return false;
        }
        self.delivered += 1;
        self.delay_sum += delay;
        true
    }
}

/// The headline numbers for one finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub dropped_packets: u64,
    /// Mean per-node energy drawn, joules; tx + rx, plus idle when configured.
    pub consumed_power_j: f64,
    pub throughput_pkt_per_ms: f64,
    pub throughput_pkt_per_s: f64,
    pub throughput_kbit_per_s: f64,
    /// None when nothing was delivered (the ratio is undefined).
    pub mac_load: Option<f64>,
    pub control_overhead: u64,
    pub generated: u64,
    pub delivered: u64,
    pub drop_queue: u64,
    pub drop_collision: u64,
    pub drop_noroute: u64,
    pub drop_buffer: u64,
    pub drop_ttl: u64,
    pub drop_node_dead: u64,
    pub control_tx: ControlTx,
    pub control_rx: u64,
    pub dead_nodes: u32,
    pub mean_delay_s: Option<f64>,
}

/// Reduces the accumulator and energy ledgers to the five metrics.
pub fn finalize(
    acc: &MetricsAccumulator,
    duration_s: f64,
    payload_bits: u64,
    ledgers: &[EnergyLedger],
    count_idle: bool,
) -> MetricsReport {
    assert!(duration_s > 0.0 && !ledgers.is_empty());
    let consumed: f64 = ledgers
        .iter()
        .map(|l| l.consumed_tx + l.consumed_rx + if count_idle { l.consumed_idle } else { 0.0 })
        .sum();
    let consumed_power_j = consumed / ledgers.len() as f64;
    let delivered = acc.delivered;
    let throughput_pkt_per_s = delivered as f64 / duration_s;
    MetricsReport {
        dropped_packets: acc.dropped_total(),
        consumed_power_j,
        throughput_pkt_per_ms: delivered as f64 / (duration_s * 1000.0),
        throughput_pkt_per_s,
        throughput_kbit_per_s: throughput_pkt_per_s * payload_bits as f64 / 1000.0,
        mac_load: if delivered > 0 {
            Some(acc.mac_frames_tx as f64 / delivered as f64)
        } else {
            None
        },
        control_overhead: acc.control_tx.total() + acc.control_rx,
        generated: acc.generated,
        delivered,
        drop_queue: acc.dropped(DropCause::QueueFull),
        drop_collision: acc.dropped(DropCause::Collision),
        drop_noroute: acc.dropped(DropCause::NoRoute),
        drop_buffer: acc.dropped(DropCause::BufferTimeout),
        drop_ttl: acc.dropped(DropCause::Ttl),
        drop_node_dead: acc.dropped(DropCause::NodeDead),
        control_tx: acc.control_tx,
        control_rx: acc.control_rx,
        dead_nodes: ledgers.iter().filter(|l| !l.alive).count() as u32,
        mean_delay_s: if delivered > 0 {
            Some(acc.delay_sum / delivered as f64)
        } else {
            None
        },
    }
}
