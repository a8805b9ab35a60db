//! The simulation itself: one world of nodes driven by the event queue from
//! scenario start to the horizon.
//!
//! Everything here is single-threaded and owned by one `Simulation` value;
//! independent runs can execute on parallel workers because they share no
//! state at all.

use std::cell::Cell;
use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::rc::Rc;

use crate::config::{Protocol, ScenarioConfig};
use crate::engine::{EventHandle, RandomStreams, Scheduler, SimTime, StreamLabel};
use crate::mac::{Frame, MacQueue, Payload, BROADCAST};
use crate::metrics::{finalize, DropCause, MetricsAccumulator, MetricsReport};
use crate::mobility::{MobilityModel, NodeId};
use crate::radio::{rx_energy, tx_energy, EnergyCategory, EnergyLedger};
use crate::routing::{
    ext_forward_decision, GateOutcome, NeighborTable, Rerr, RoutingTable, Rrep, Rreq, RreqSeenCache,
};
use crate::traffic::{spawn_flows, CbrFlow, DataPacket, FlowId};

/// How long a (originator, rreq_id) entry survives in the duplicate cache.
const SEEN_CACHE_AGE: f64 = 6.0;
/// Period of the global bookkeeping sweep (route expiry, HELLO-loss
/// detection, buffer age-out).
const MAINTENANCE_INTERVAL: f64 = 0.5;

/// Everything the event queue can dispatch.
#[derive(Debug, Clone)]
pub enum Event {
    FrameArrival {
        rx: NodeId,
        from: NodeId,
        frame: Rc<Frame>,
        /// Latched true if any overlapping signal corrupted this reception.
        corrupt: Rc<Cell<bool>>,
    },
    TxComplete {
        node: NodeId,
    },
    /// Reserved for stepped mobility; positions are computed lazily, so this
    /// is never scheduled.
    MobilityWaypoint {
        node: NodeId,
    },
    CbrTick {
        flow: FlowId,
    },
    HelloTick {
        node: NodeId,
    },
    RouteTimeout {
        kind: TimeoutKind,
    },
    SimEnd,
}

#[derive(Debug, Clone, Copy)]
pub enum TimeoutKind {
    /// The periodic global sweep.
    Maintenance,
    /// A discovery's reply-wait expired.
    Discovery {
        node: NodeId,
        dst: NodeId,
        attempt: u32,
    },
}

/// Which trace streams to record during a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct TraceOptions {
    pub events: bool,
    pub routing: bool,
    pub waypoints: bool,
}

/// Tab-separated trace text, empty for streams that were not enabled.
#[derive(Debug, Clone, Default)]
pub struct Traces {
    /// `time \t node \t kind \t detail`, one line per dispatched event.
    pub events: String,
    /// `time \t node \t rreq_id \t beta \t p_i \t R \t decision` per gate call.
    pub routing: String,
    /// `node \t depart \t origin \t destination \t speed` per realized leg.
    pub waypoints: String,
}

/// One finished run: identity, metrics, and the custody audit.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub nodes: u32,
    pub protocol: Protocol,
    pub seed: u64,
    pub report: MetricsReport,
    /// Packets still in queues, buffers, or on the air at the horizon.
    pub in_flight_at_end: u64,
}

#[derive(Debug)]
pub struct SimOutput {
    pub record: RunRecord,
    pub traces: Traces,
    /// Final per-node energy ledgers, indexed by node id.
    pub ledgers: Vec<EnergyLedger>,
    /// How many uniform draws the probabilistic forwarding gate consumed.
    pub ext_gate_draws: u64,
    /// No-route drops flushed at the source after a failed discovery,
    /// versus those shed mid-path by a forwarder. Diagnostic split only;
    /// both land in the no-route bucket of the report.
    pub noroute_at_source: u64,
    pub noroute_in_transit: u64,
}

struct BufferedPacket {
    dst: NodeId,
    packet: DataPacket,
    buffered_at: f64,
}

struct Node {
    routing: RoutingTable,
    neighbors: NeighborTable,
    seen: RreqSeenCache,
    seq: u32,
    next_rreq_id: u32,
    /// Destination → attempt number of the discovery in flight.
    pending: BTreeMap<NodeId, u32>,
    buffer: VecDeque<BufferedPacket>,
    queue: MacQueue,
    energy: EnergyLedger,
    /// The in-progress transmission: its completion event and the corruption
    /// flags of its scheduled receptions (set if the node dies mid-frame).
    current_tx: Option<(EventHandle, Vec<Rc<Cell<bool>>>)>,
    /// A frame committed to the air, waiting out its dispatch jitter.
    armed: Option<(EventHandle, Rc<Frame>)>,
    /// Pending deferred-dispatch wakeup, so a busy carrier is only waited
    /// on once at a time.
    mac_wake: Option<EventHandle>,
    tx_count: u64,
}

/// A signal impinging on one receiver: interferes while it lasts, decodable
/// only if it carries a corruption flag that stays unset.
struct Airing {
    start: f64,
    end: f64,
    corrupt: Option<Rc<Cell<bool>>>,
}

/// What a routing-table lookup plus the link-liveness test yields.
enum HopLookup {
    /// Valid route, next hop recently heard.
    Live(NodeId),
    /// Valid route, but the next hop has gone silent: a link break.
    Broken(NodeId),
    /// No valid route at all.
    None,
}

pub struct Simulation {
    cfg: ScenarioConfig,
    sched: Scheduler<Event>,
    streams: RandomStreams,
    mobility: MobilityModel,
    nodes: Vec<Node>,
    flows: Vec<CbrFlow>,
    flows_injected: bool,
    next_flow_seq: Vec<u64>,
    acc: MetricsAccumulator,
    channel: Vec<Vec<Airing>>,
    comm_range: f64,
    cs_range: f64,
    opts: TraceOptions,
    traces: Traces,
    rrep_no_reverse: u64,
    noroute_at_source: u64,
    noroute_in_transit: u64,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig, opts: TraceOptions) -> Simulation {
        crate::config::validate(&cfg).expect("invalid scenario configuration");
        let mut streams = RandomStreams::new(cfg.seed);
        let mobility = MobilityModel::new(
            cfg.nodes,
            cfg.area_width,
            cfg.area_height,
            cfg.v_min,
            cfg.v_max,
            cfg.pause,
            &mut streams,
        );
        Simulation::assemble(cfg, opts, streams, mobility)
    }

    /// Runs on a caller-supplied topology instead of random waypoints; the
    /// scripted-scenario entry point.
    pub fn with_mobility(
        cfg: ScenarioConfig,
        opts: TraceOptions,
        mobility: MobilityModel,
    ) -> Simulation {
        crate::config::validate(&cfg).expect("invalid scenario configuration");
        assert_eq!(
            mobility.node_count(),
            cfg.nodes,
            "mobility model and config disagree on node count"
        );
        let streams = RandomStreams::new(cfg.seed);
        Simulation::assemble(cfg, opts, streams, mobility)
    }

    fn assemble(
        cfg: ScenarioConfig,
        opts: TraceOptions,
        streams: RandomStreams,
        mobility: MobilityModel,
    ) -> Simulation {
        let n = cfg.nodes as usize;
        let nodes = (0..n)
            .map(|_| Node {
                routing: RoutingTable::default(),
                neighbors: NeighborTable::default(),
                seen: RreqSeenCache::default(),
                seq: 0,
                next_rreq_id: 0,
                pending: BTreeMap::new(),
                buffer: VecDeque::new(),
                queue: MacQueue::new(cfg.mac.queue_capacity),
                energy: EnergyLedger::new(cfg.energy.initial_energy, cfg.energy.p_idle),
                current_tx: None,
                armed: None,
                mac_wake: None,
                tx_count: 0,
            })
            .collect();
        let comm_range = cfg.radio.comm_range();
        let cs_range = cfg.radio.cs_range();
        Simulation {
            cfg,
            sched: Scheduler::new(),
            streams,
            mobility,
            nodes,
            flows: Vec::new(),
            flows_injected: false,
            next_flow_seq: Vec::new(),
            acc: MetricsAccumulator::default(),
            channel: (0..n).map(|_| Vec::new()).collect(),
            comm_range,
            cs_range,
            opts,
            traces: Traces::default(),
            rrep_no_reverse: 0,
            noroute_at_source: 0,
            noroute_in_transit: 0,
        }
    }

    /// Replaces the randomly drawn traffic pattern; no traffic-stream draws
    /// are consumed. Call before `run`.
    pub fn set_flows(&mut self, flows: Vec<CbrFlow>) {
        for f in &flows {
            assert!(f.src < self.cfg.nodes && f.dst < self.cfg.nodes && f.src != f.dst);
        }
        self.flows = flows;
        self.flows_injected = true;
    }

    /// Warm-starts a routing table entry that never expires; lets scripted
    /// scenarios skip discovery entirely.
    pub fn install_route(&mut self, node: NodeId, dest: NodeId, next_hop: NodeId, hop_count: u8) {
        let installed = self.nodes[node as usize].routing.consider_update(
            dest,
            next_hop,
            hop_count,
            Some(1),
            0.0,
            f64::INFINITY,
        );
        assert!(installed, "warm-start route rejected by freshness rules");
        // A warm route implies a live link: pretend the hop was heard at
        // time zero so scripted scenarios start with a usable path.
        self.nodes[node as usize].neighbors.heard(next_hop, 0.0);
    }

    pub fn run(mut self) -> SimOutput {
        self.prime();
        let horizon = SimTime::from_secs(self.cfg.duration);
        while let Some((t, ev)) = self.sched.pop_due(horizon) {
            self.handle(t, ev);
        }
        self.finish()
    }

    fn prime(&mut self) {
        if !self.flows_injected {
            self.flows = spawn_flows(
                self.cfg.nodes,
                self.cfg.traffic.flows,
                self.cfg.traffic.packet_bytes,
                self.cfg.traffic.rate,
                self.cfg.traffic.start,
                self.cfg.traffic.stop,
                &mut self.streams,
            );
        }
        self.next_flow_seq = vec![0; self.flows.len()];
        if self.cfg.aodv.hello_interval > 0.0 {
            for node in 0..self.cfg.nodes {
                let phase = self.streams.draw_uniform(
                    StreamLabel::MacJitter,
                    0.0,
                    self.cfg.aodv.hello_interval,
                );
                self.sched
                    .schedule(SimTime::from_secs(phase), Event::HelloTick { node });
            }
        }
        for (idx, flow) in self.flows.iter().enumerate() {
            if flow.start_at < self.cfg.duration {
                self.sched.schedule(
                    SimTime::from_secs(flow.start_at),
                    Event::CbrTick { flow: idx },
                );
            }
        }
        self.sched.schedule(
            SimTime::from_secs(MAINTENANCE_INTERVAL),
            Event::RouteTimeout {
                kind: TimeoutKind::Maintenance,
            },
        );
        self.sched
            .schedule(SimTime::from_secs(self.cfg.duration), Event::SimEnd);
    }

    fn handle(&mut self, t: SimTime, ev: Event) {
        if self.opts.events {
            self.trace_event(t, &ev);
        }
        match ev {
            Event::FrameArrival {
                rx,
                from,
                frame,
                corrupt,
            } => self.on_frame_arrival(t, rx, from, frame, corrupt.get()),
            Event::TxComplete { node } => {
                // One event class serves the whole transmit lifecycle: the
                // armed frame's start instant, the end of a transmission,
                // and the wakeup after a busy carrier.
                if !self.alive(node) {
                    return;
                }
                if let Some((_, frame)) = self.nodes[node as usize].armed.take() {
                    self.fire(t, node, frame);
                } else {
                    self.nodes[node as usize].current_tx = None;
                    self.nodes[node as usize].mac_wake = None;
                    self.try_dispatch(t, node);
                }
            }
            Event::MobilityWaypoint { .. } => {}
            Event::CbrTick { flow } => self.on_cbr_tick(t, flow),
            Event::HelloTick { node } => self.on_hello_tick(t, node),
            Event::RouteTimeout { kind } => match kind {
                TimeoutKind::Maintenance => self.on_maintenance(t),
                TimeoutKind::Discovery { node, dst, attempt } => {
                    self.on_discovery_timeout(t, node, dst, attempt)
                }
            },
            Event::SimEnd => {}
        }
    }

    // ---- traffic ----

    fn on_cbr_tick(&mut self, t: SimTime, flow_idx: FlowId) {
        let flow = self.flows[flow_idx];
        if t.secs() >= flow.stop_at || !self.alive(flow.src) {
            return;
        }
        let seq = self.next_flow_seq[flow_idx];
        self.next_flow_seq[flow_idx] += 1;
        self.acc.generated += 1;
        let packet = DataPacket {
            flow: flow_idx,
            seq,
            created_at: t,
            ttl: self.cfg.aodv.data_ttl,
        };
        self.send_data(t, flow.src, flow.dst, packet);
        let next = t.secs() + flow.interval;
        if next < flow.stop_at && next < self.cfg.duration {
            self.sched
                .schedule(SimTime::from_secs(next), Event::CbrTick { flow: flow_idx });
        }
    }

    /// Source-side admission: forward on a live route, otherwise park the
    /// packet and make sure a discovery is running.
    fn send_data(&mut self, t: SimTime, src: NodeId, dst: NodeId, packet: DataPacket) {
        let now = t.secs();
        match self.route_hop(src, dst, now) {
            HopLookup::Live(next_hop) => {
                self.nodes[src as usize]
                    .routing
                    .refresh(dst, now, self.cfg.aodv.route_lifetime);
                let frame = self.make_frame(src, next_hop, Payload::Data(packet), t);
                self.enqueue_frame(t, src, frame);
                return;
            }
            HopLookup::Broken(gone) => self.declare_broken(t, src, gone),
            HopLookup::None => {}
        }
        if self.nodes[src as usize].buffer.len() >= self.cfg.aodv.buffer_capacity {
            self.acc.drop_packet(DropCause::BufferTimeout);
        } else {
            self.nodes[src as usize].buffer.push_back(BufferedPacket {
                dst,
                packet,
                buffered_at: now,
            });
        }
        if !self.nodes[src as usize].pending.contains_key(&dst) {
            self.start_discovery(t, src, dst, 0);
        }
    }

    fn start_discovery(&mut self, t: SimTime, src: NodeId, dst: NodeId, attempt: u32) {
        let node = &mut self.nodes[src as usize];
        node.seq += 1;
        let rreq_id = node.next_rreq_id;
        node.next_rreq_id += 1;
        node.seen.first_time(src, rreq_id, t.secs());
        node.pending.insert(dst, attempt);
        let rreq = Rreq {
            originator: src,
            originator_seq: node.seq,
            rreq_id,
            destination: dst,
            dest_seq_known: node.routing.last_known_seq(dst),
            hop_count: 0,
        };
        let frame = self.make_frame(src, BROADCAST, Payload::Rreq(rreq), t);
        self.enqueue_frame(t, src, frame);
        self.sched.schedule(
            t + self.cfg.aodv.reply_wait,
            Event::RouteTimeout {
                kind: TimeoutKind::Discovery {
                    node: src,
                    dst,
                    attempt,
                },
            },
        );
    }

    fn on_discovery_timeout(&mut self, t: SimTime, src: NodeId, dst: NodeId, attempt: u32) {
        if !self.alive(src) {
            return;
        }
        match self.nodes[src as usize].pending.get(&dst) {
            Some(&current) if current == attempt => {}
            _ => return,
        }
        // A route may have appeared sideways (e.g. as a reverse route of the
        // destination's own discovery) without any RREP addressed to us.
        if self.nodes[src as usize]
            .routing
            .valid_route(dst, t.secs())
            .is_some()
        {
            self.nodes[src as usize].pending.remove(&dst);
            self.flush_buffer(t, src, dst);
            return;
        }
        if attempt < self.cfg.aodv.rreq_retries {
            self.start_discovery(t, src, dst, attempt + 1);
            return;
        }
        // Discovery exhausted: everything parked for this destination is lost.
        self.nodes[src as usize].pending.remove(&dst);
        let node = &mut self.nodes[src as usize];
        let before = node.buffer.len();
        node.buffer.retain(|bp| bp.dst != dst);
        let lost = before - node.buffer.len();
        self.noroute_at_source += lost as u64;
        for _ in 0..lost {
            self.acc.drop_packet(DropCause::NoRoute);
        }
    }

    /// Sends every parked packet for `dst` down the (new) route.
    fn flush_buffer(&mut self, t: SimTime, src: NodeId, dst: NodeId) {
        let mut flushed = Vec::new();
        let node = &mut self.nodes[src as usize];
        let mut i = 0;
        while i < node.buffer.len() {
            if node.buffer[i].dst == dst {
                flushed.push(node.buffer.remove(i).unwrap());
            } else {
                i += 1;
            }
        }
        for bp in flushed {
            self.send_data(t, src, dst, bp.packet);
        }
    }

    /// Resolves the usable next hop toward `dst`. A valid table entry whose
    /// next hop has fallen silent past the freshness window is a detected
    /// link break, not a route.
    fn route_hop(&self, node: NodeId, dst: NodeId, now: f64) -> HopLookup {
        let n = &self.nodes[node as usize];
        let Some(route) = n.routing.valid_route(dst, now) else {
            return HopLookup::None;
        };
        let hop = route.next_hop;
        if n.neighbors
            .is_fresh(hop, now, self.cfg.aodv.neighbor_freshness)
        {
            HopLookup::Live(hop)
        } else {
            HopLookup::Broken(hop)
        }
    }

    /// Tears down every route through a lost neighbor and tells the
    /// neighborhood which destinations just became unreachable here.
    fn declare_broken(&mut self, t: SimTime, node_id: NodeId, gone: NodeId) {
        let reported = self.nodes[node_id as usize].routing.invalidate_via(gone);
        if !reported.is_empty() {
            let frame = self.make_frame(
                node_id,
                BROADCAST,
                Payload::Rerr(Rerr {
                    unreachable: reported,
                }),
                t,
            );
            self.enqueue_frame(t, node_id, frame);
        }
    }

    // ---- beacons and maintenance ----

    fn on_hello_tick(&mut self, t: SimTime, node: NodeId) {
        if !self.alive(node) {
            return;
        }
        let frame = self.make_frame(node, BROADCAST, Payload::Hello, t);
        self.enqueue_frame(t, node, frame);
        // ±10% spread keeps beacons from locking into a global phase.
        let wobble = self.streams.draw_uniform(StreamLabel::MacJitter, 0.9, 1.1);
        let next = t.secs() + self.cfg.aodv.hello_interval * wobble;
        if next < self.cfg.duration {
            self.sched
                .schedule(SimTime::from_secs(next), Event::HelloTick { node });
        }
    }

    fn on_maintenance(&mut self, t: SimTime) {
        let now = t.secs();
        for idx in 0..self.nodes.len() {
            let node_id = idx as NodeId;
            if !self.nodes[idx].energy.alive {
                continue;
            }
            let was_alive = self.nodes[idx].energy.alive;
            self.nodes[idx].energy.accrue_idle(now);
            if was_alive && !self.nodes[idx].energy.alive {
                self.on_node_death(node_id);
                continue;
            }
            let lost = self.nodes[idx]
                .neighbors
                .expire(now, self.cfg.aodv.neighbor_freshness);
            for gone in lost {
                let reported = self.nodes[idx].routing.invalidate_via(gone);
                if !reported.is_empty() {
                    let frame = self.make_frame(
                        node_id,
                        BROADCAST,
                        Payload::Rerr(Rerr {
                            unreachable: reported,
                        }),
                        t,
                    );
                    self.enqueue_frame(t, node_id, frame);
                }
            }
            self.nodes[idx].routing.expire(now);
            self.nodes[idx].seen.prune(now - SEEN_CACHE_AGE);
            let timeout = self.cfg.aodv.buffer_timeout;
            let before = self.nodes[idx].buffer.len();
            self.nodes[idx]
                .buffer
                .retain(|bp| bp.buffered_at + timeout > now);
            for _ in 0..before - self.nodes[idx].buffer.len() {
                self.acc.drop_packet(DropCause::BufferTimeout);
            }
        }
        let next = now + MAINTENANCE_INTERVAL;
        if next < self.cfg.duration {
            self.sched.schedule(
                SimTime::from_secs(next),
                Event::RouteTimeout {
                    kind: TimeoutKind::Maintenance,
                },
            );
        }
    }

    // ---- frame reception ----

    fn on_frame_arrival(
        &mut self,
        t: SimTime,
        rx: NodeId,
        from: NodeId,
        frame: Rc<Frame>,
        collided: bool,
    ) {
        let addressed_data = frame.dst == rx && matches!(frame.payload, Payload::Data(_));
        if !self.alive(rx) {
            if addressed_data {
                self.acc.drop_packet(DropCause::NodeDead);
            }
            return;
        }
        let cost = rx_energy(frame.size_bits, &self.cfg.energy, self.cfg.radio.bitrate);
        if self.nodes[rx as usize]
            .energy
            .drain(t.secs(), cost, EnergyCategory::Rx)
        {
            self.on_node_death(rx);
            if addressed_data {
                self.acc.drop_packet(DropCause::NodeDead);
            }
            return;
        }
        if collided {
            if addressed_data {
                self.acc.drop_packet(DropCause::Collision);
            }
            return;
        }
        // Hearing any intact frame proves the link, beacon or not.
        self.nodes[rx as usize].neighbors.heard(from, t.secs());
        if frame.dst != BROADCAST && frame.dst != rx {
            return;
        }
        match &frame.payload {
            Payload::Hello => {
                self.acc.control_rx += 1;
            }
            Payload::Rreq(rreq) => {
                self.acc.control_rx += 1;
                let rreq = *rreq;
                self.process_rreq(t, rx, from, rreq);
            }
            Payload::Rrep(rrep) => {
                self.acc.control_rx += 1;
                let rrep = *rrep;
                self.process_rrep(t, rx, from, rrep);
            }
            Payload::Rerr(rerr) => {
                self.acc.control_rx += 1;
                let rerr = rerr.clone();
                self.process_rerr(t, rx, from, rerr);
            }
            Payload::Data(packet) => {
                let packet = *packet;
                self.handle_data_frame(t, rx, packet);
            }
        }
    }

    // ---- AODV core ----

    fn process_rreq(&mut self, t: SimTime, node_id: NodeId, prev: NodeId, mut rreq: Rreq) {
        let now = t.secs();
        if !self.nodes[node_id as usize]
            .seen
            .first_time(rreq.originator, rreq.rreq_id, now)
        {
            return;
        }
        // The flood's trail back toward the originator.
        self.nodes[node_id as usize].routing.consider_update(
            rreq.originator,
            prev,
            rreq.hop_count + 1,
            Some(rreq.originator_seq),
            now,
            self.cfg.aodv.route_lifetime,
        );
        if node_id == rreq.destination {
            let node = &mut self.nodes[node_id as usize];
            node.seq = node.seq.max(rreq.dest_seq_known.unwrap_or(0)) + 1;
            let rrep = Rrep {
                originator: rreq.originator,
                destination: node_id,
                dest_seq: node.seq,
                hop_count: 0,
                lifetime: self.cfg.aodv.route_lifetime,
            };
            self.unicast_rrep(t, node_id, rrep);
            return;
        }
        // A fresh-enough route lets an intermediate answer on the
        // destination's behalf.
        if let Some(route) = self.nodes[node_id as usize]
            .routing
            .valid_route(rreq.destination, now)
        {
            if let Some(seq) = route.dest_seq {
                if rreq.dest_seq_known.is_none_or(|known| seq >= known) {
                    let rrep = Rrep {
                        originator: rreq.originator,
                        destination: rreq.destination,
                        dest_seq: seq,
                        hop_count: route.hop_count,
                        lifetime: route.expires_at - now,
                    };
                    self.unicast_rrep(t, node_id, rrep);
                    return;
                }
            }
        }
        if self.cfg.protocol == Protocol::AodvExt {
            let beta = self.nodes[node_id as usize]
                .neighbors
                .count_fresh(now, self.cfg.aodv.neighbor_freshness);
            let outcome = ext_forward_decision(beta, &self.cfg.ext, &mut self.streams);
            if self.opts.routing {
                self.trace_gate(t, node_id, &rreq, outcome);
            }
            if !outcome.forwards() {
                return;
            }
        }
        rreq.hop_count += 1;
        let frame = self.make_frame(node_id, BROADCAST, Payload::Rreq(rreq), t);
        self.enqueue_frame(t, node_id, frame);
    }

    fn unicast_rrep(&mut self, t: SimTime, node_id: NodeId, rrep: Rrep) {
        match self.route_hop(node_id, rrep.originator, t.secs()) {
            HopLookup::Live(next_hop) => {
                let frame = self.make_frame(node_id, next_hop, Payload::Rrep(rrep), t);
                self.enqueue_frame(t, node_id, frame);
            }
            HopLookup::Broken(gone) => {
                self.rrep_no_reverse += 1;
                self.declare_broken(t, node_id, gone);
            }
            HopLookup::None => {
                self.rrep_no_reverse += 1;
            }
        }
    }

    fn process_rrep(&mut self, t: SimTime, node_id: NodeId, prev: NodeId, mut rrep: Rrep) {
        let now = t.secs();
        self.nodes[node_id as usize].routing.consider_update(
            rrep.destination,
            prev,
            rrep.hop_count + 1,
            Some(rrep.dest_seq),
            now,
            rrep.lifetime.min(self.cfg.aodv.route_lifetime),
        );
        if node_id == rrep.originator {
            self.nodes[node_id as usize]
                .pending
                .remove(&rrep.destination);
            self.flush_buffer(t, node_id, rrep.destination);
            return;
        }
        self.nodes[node_id as usize].routing.refresh(
            rrep.originator,
            now,
            self.cfg.aodv.route_lifetime,
        );
        rrep.hop_count += 1;
        self.unicast_rrep(t, node_id, rrep);
    }

    fn process_rerr(&mut self, t: SimTime, node_id: NodeId, prev: NodeId, rerr: Rerr) {
        let invalidated = self.nodes[node_id as usize]
            .routing
            .invalidate_reported(prev, &rerr.unreachable);
        if invalidated.is_empty() {
            return;
        }
        let frame = self.make_frame(
            node_id,
            BROADCAST,
            Payload::Rerr(Rerr {
                unreachable: invalidated,
            }),
            t,
        );
        self.enqueue_frame(t, node_id, frame);
    }

    fn handle_data_frame(&mut self, t: SimTime, node_id: NodeId, mut packet: DataPacket) {
        let now = t.secs();
        let flow = self.flows[packet.flow];
        if node_id == flow.dst {
            self.acc
                .deliver(packet.flow, packet.seq, now - packet.created_at.secs());
            return;
        }
        if packet.ttl <= 1 {
            self.acc.drop_packet(DropCause::Ttl);
            return;
        }
        packet.ttl -= 1;
        let next_hop = match self.route_hop(node_id, flow.dst, now) {
            HopLookup::Live(hop) => hop,
            HopLookup::Broken(gone) => {
                // Transit link break: lose the packet and warn the
                // neighborhood so upstream stops pushing into the hole.
                self.noroute_in_transit += 1;
                self.acc.drop_packet(DropCause::NoRoute);
                self.declare_broken(t, node_id, gone);
                return;
            }
            HopLookup::None => {
                self.noroute_in_transit += 1;
                self.acc.drop_packet(DropCause::NoRoute);
                let seq = self.nodes[node_id as usize]
                    .routing
                    .last_known_seq(flow.dst)
                    .map_or(1, |s| s + 1);
                let frame = self.make_frame(
                    node_id,
                    BROADCAST,
                    Payload::Rerr(Rerr {
                        unreachable: vec![(flow.dst, seq)],
                    }),
                    t,
                );
                self.enqueue_frame(t, node_id, frame);
                return;
            }
        };
        self.nodes[node_id as usize]
            .routing
            .refresh(flow.dst, now, self.cfg.aodv.route_lifetime);
        self.nodes[node_id as usize]
            .routing
            .refresh(flow.src, now, self.cfg.aodv.route_lifetime);
        let frame = self.make_frame(node_id, next_hop, Payload::Data(packet), t);
        self.enqueue_frame(t, node_id, frame);
    }

    // ---- MAC and channel ----

    fn make_frame(&self, src: NodeId, dst: NodeId, payload: Payload, t: SimTime) -> Frame {
        Frame::new(
            src,
            dst,
            payload,
            self.cfg.mac.header_bytes,
            self.cfg.traffic.packet_bytes,
            t,
        )
    }

    fn enqueue_frame(&mut self, t: SimTime, node_id: NodeId, frame: Frame) {
        if !self.alive(node_id) {
            if matches!(frame.payload, Payload::Data(_)) {
                self.acc.drop_packet(DropCause::NodeDead);
            }
            return;
        }
        if let Err(rejected) = self.nodes[node_id as usize].queue.enqueue(Rc::new(frame)) {
            if matches!(rejected.payload, Payload::Data(_)) {
                self.acc.drop_packet(DropCause::QueueFull);
            }
            return;
        }
        self.try_dispatch(t, node_id);
    }

    /// What carrier sense reports at `node_id` at time `t`: the end of the
    /// latest detectable signal, if any. A signal on the air for less than
    /// the sensing latency has not been detected yet.
    fn carrier_busy_until(&self, node_id: NodeId, t: f64) -> Option<f64> {
        let horizon = t - self.cfg.mac.sense_latency;
        let busy = self.channel[node_id as usize]
            .iter()
            .filter(|a| a.start <= horizon && t < a.end)
            .fold(f64::NEG_INFINITY, |acc, a| acc.max(a.end));
        (busy > t).then_some(busy)
    }

    /// Schedules a fresh dispatch attempt for when the sensed signal ends,
    /// unless one is already pending.
    fn wake_when_clear(&mut self, node_id: NodeId, busy_until: f64) {
        if self.nodes[node_id as usize].mac_wake.is_none() {
            let handle = self.sched.schedule(
                SimTime::from_secs(busy_until),
                Event::TxComplete { node: node_id },
            );
            self.nodes[node_id as usize].mac_wake = Some(handle);
        }
    }

    fn try_dispatch(&mut self, t: SimTime, node_id: NodeId) {
        // Half-duplex, one frame in flight or armed at a time per node.
        let node = &self.nodes[node_id as usize];
        if !self.alive(node_id)
            || node.current_tx.is_some()
            || node.armed.is_some()
            || node.queue.is_empty()
        {
            return;
        }
        // Carrier sense: while a signal is audible here, hold the frame and
        // come back when the air clears.
        if let Some(busy_until) = self.carrier_busy_until(node_id, t.secs()) {
            self.wake_when_clear(node_id, busy_until);
            return;
        }
        let Some(frame) = self.nodes[node_id as usize].queue.pop() else {
            return;
        };
        let window = if frame.dst == BROADCAST {
            self.cfg.mac.broadcast_jitter_max
        } else {
            self.cfg.mac.jitter_max
        };
        let jitter = if window > 0.0 {
            self.streams
                .draw_uniform(StreamLabel::MacJitter, 0.0, window)
        } else {
            0.0
        };
        // Commit to a start instant behind the randomizing jitter; the
        // channel is checked once more when it arrives.
        let handle = self.sched.schedule(
            SimTime::from_secs(t.secs() + jitter),
            Event::TxComplete { node: node_id },
        );
        self.nodes[node_id as usize].armed = Some((handle, frame));
    }

    /// The jittered start instant has arrived. Transmit if the channel still
    /// looks clear, otherwise put the frame back and wait out the signal.
    /// A rival that started less than the sensing latency ago is invisible
    /// to this check, and the two frames will collide.
    fn fire(&mut self, t: SimTime, node_id: NodeId, frame: Rc<Frame>) {
        if let Some(busy_until) = self.carrier_busy_until(node_id, t.secs()) {
            self.nodes[node_id as usize].queue.requeue_front(frame);
            self.wake_when_clear(node_id, busy_until);
            return;
        }
        let tx_start = t.secs();
        let tx_end = tx_start + self.cfg.radio.airtime(frame.size_bits);
        let cost = tx_energy(frame.size_bits, &self.cfg.energy, self.cfg.radio.bitrate);
        if self.nodes[node_id as usize]
            .energy
            .drain(t.secs(), cost, EnergyCategory::Tx)
        {
            if matches!(frame.payload, Payload::Data(_)) {
                self.acc.drop_packet(DropCause::NodeDead);
            }
            self.on_node_death(node_id);
            return;
        }
        self.acc.mac_frames_tx += 1;
        self.nodes[node_id as usize].tx_count += 1;
        match frame.payload {
            Payload::Rreq(_) => self.acc.control_tx.rreq += 1,
            Payload::Rrep(_) => self.acc.control_tx.rrep += 1,
            Payload::Rerr(_) => self.acc.control_tx.rerr += 1,
            Payload::Hello => self.acc.control_tx.hello += 1,
            Payload::Data(_) => {}
        }
        let corrupts = self.put_on_air(frame, tx_start, tx_end);
        let handle = self.sched.schedule(
            SimTime::from_secs(tx_end),
            Event::TxComplete { node: node_id },
        );
        self.nodes[node_id as usize].current_tx = Some((handle, corrupts));
    }

    /// Registers the signal at every receiver it reaches, schedules decodes,
    /// and resolves collisions pairwise by airtime overlap. Returns this
    /// frame's corruption flags (latched if the sender dies mid-frame).
    fn put_on_air(&mut self, frame: Rc<Frame>, tx_start: f64, tx_end: f64) -> Vec<Rc<Cell<bool>>> {
        let sender = frame.src;
        let when = SimTime::from_secs(tx_start);
        let sender_pos = self.mobility.position_at(sender, when, &mut self.streams);
        let mut corrupts = Vec::new();
        let mut dst_reached = false;
        for rx in 0..self.cfg.nodes {
            if rx == sender || !self.alive(rx) {
                continue;
            }
            let dist =
                sender_pos.distance_to(self.mobility.position_at(rx, when, &mut self.streams));
            if dist > self.cs_range {
                continue;
            }
            let reg = &mut self.channel[rx as usize];
            reg.retain(|a| a.end > tx_start);
            let mut hit = false;
            for airing in reg.iter() {
                if airing.start < tx_end && airing.end > tx_start {
                    hit = true;
                    if let Some(flag) = &airing.corrupt {
                        flag.set(true);
                    }
                }
            }
            if dist <= self.comm_range {
                let flag = Rc::new(Cell::new(hit));
                reg.push(Airing {
                    start: tx_start,
                    end: tx_end,
                    corrupt: Some(flag.clone()),
                });
                corrupts.push(flag.clone());
                self.sched.schedule(
                    SimTime::from_secs(tx_end),
                    Event::FrameArrival {
                        rx,
                        from: sender,
                        frame: frame.clone(),
                        corrupt: flag,
                    },
                );
                if frame.dst == rx {
                    dst_reached = true;
                }
            } else {
                // Sensed but undecodable: pure interference.
                reg.push(Airing {
                    start: tx_start,
                    end: tx_end,
                    corrupt: None,
                });
            }
        }
        // The sender is deaf to arrivals overlapping its own transmission.
        let own = &mut self.channel[sender as usize];
        own.retain(|a| a.end > tx_start);
        for airing in own.iter() {
            if airing.start < tx_end && airing.end > tx_start {
                if let Some(flag) = &airing.corrupt {
                    flag.set(true);
                }
            }
        }
        own.push(Airing {
            start: tx_start,
            end: tx_end,
            corrupt: None,
        });
        if frame.dst != BROADCAST && !dst_reached {
            // The addressee never hears this frame; data custody ends here.
            if matches!(frame.payload, Payload::Data(_)) {
                if self.alive(frame.dst) {
                    self.noroute_in_transit += 1;
                    self.acc.drop_packet(DropCause::NoRoute);
                } else {
                    self.acc.drop_packet(DropCause::NodeDead);
                }
            }
        }
        corrupts
    }

    fn on_node_death(&mut self, node_id: NodeId) {
        if let Some((handle, corrupts)) = self.nodes[node_id as usize].current_tx.take() {
            // The frame dies on the air: receivers get garbage.
            self.sched.cancel(handle);
            for flag in corrupts {
                flag.set(true);
            }
        }
        let lost_data = {
            let node = &mut self.nodes[node_id as usize];
            let mut lost = 0;
            if let Some((handle, frame)) = node.armed.take() {
                self.sched.cancel(handle);
                if matches!(frame.payload, Payload::Data(_)) {
                    lost += 1;
                }
            }
            for frame in node.queue.drain_all() {
                if matches!(frame.payload, Payload::Data(_)) {
                    lost += 1;
                }
            }
            lost += node.buffer.len();
            node.buffer.clear();
            node.pending.clear();
            lost
        };
        for _ in 0..lost_data {
            self.acc.drop_packet(DropCause::NodeDead);
        }
    }

    fn alive(&self, node: NodeId) -> bool {
        self.nodes[node as usize].energy.alive
    }

    // ---- traces ----

    fn trace_event(&mut self, t: SimTime, ev: &Event) {
        let line = &mut self.traces.events;
        match ev {
            Event::FrameArrival {
                rx,
                from,
                frame,
                corrupt,
            } => {
                let dst = if frame.dst == BROADCAST {
                    "*".to_string()
                } else {
                    frame.dst.to_string()
                };
                let _ = writeln!(
                    line,
                    "{t}\t{rx}\tframe-arrival\tfrom={from} kind={} dst={dst} bits={} collided={}",
                    frame.payload.kind(),
                    frame.size_bits,
                    corrupt.get()
                );
            }
            Event::TxComplete { node } => {
                let _ = writeln!(line, "{t}\t{node}\ttx-complete\t");
            }
            Event::MobilityWaypoint { node } => {
                let _ = writeln!(line, "{t}\t{node}\tmobility-waypoint\t");
            }
            Event::CbrTick { flow } => {
                let _ = writeln!(
                    line,
                    "{t}\t{}\tcbr-tick\tflow={flow}",
                    self.flows[*flow].src
                );
            }
            Event::HelloTick { node } => {
                let _ = writeln!(line, "{t}\t{node}\thello-tick\t");
            }
            Event::RouteTimeout { kind } => match kind {
                TimeoutKind::Maintenance => {
                    let _ = writeln!(line, "{t}\t-\troute-timeout\tmaintenance");
                }
                TimeoutKind::Discovery { node, dst, attempt } => {
                    let _ = writeln!(
                        line,
                        "{t}\t{node}\troute-timeout\tdiscovery dst={dst} attempt={attempt}"
                    );
                }
            },
            Event::SimEnd => {
                let _ = writeln!(line, "{t}\t-\tsim-end\t");
            }
        }
    }

    fn trace_gate(&mut self, t: SimTime, node: NodeId, rreq: &Rreq, outcome: GateOutcome) {
        let line = &mut self.traces.routing;
        let id = format!("{}:{}", rreq.originator, rreq.rreq_id);
        match outcome {
            GateOutcome::ForwardSparse { beta } => {
                let _ = writeln!(line, "{t}\t{node}\t{id}\t{beta}\t100\tNA\tforward");
            }
            GateOutcome::Forward { beta, p, r } => {
                let _ = writeln!(line, "{t}\t{node}\t{id}\t{beta}\t{p}\t{r}\tforward");
            }
            GateOutcome::Drop { beta, p, r } => {
                let _ = writeln!(line, "{t}\t{node}\t{id}\t{beta}\t{p}\t{r}\tdrop");
            }
        }
    }

    // ---- end of run ----

    fn finish(mut self) -> SimOutput {
        let end = self.cfg.duration;
        for node in &mut self.nodes {
            node.energy.accrue_idle(end);
        }
        let mut in_flight: u64 = 0;
        for node in &self.nodes {
            in_flight += node.queue.queued_data().count() as u64;
            in_flight += node.buffer.len() as u64;
            if let Some((_, frame)) = &node.armed {
                if matches!(frame.payload, Payload::Data(_)) {
                    in_flight += 1;
                }
            }
        }
        for (_, ev) in self.sched.drain_pending() {
            if let Event::FrameArrival { rx, frame, .. } = ev {
                if frame.dst == rx && matches!(frame.payload, Payload::Data(_)) {
                    in_flight += 1;
                }
            }
        }
        let per_node_tx: u64 = self.nodes.iter().map(|n| n.tx_count).sum();
        assert_eq!(
            per_node_tx, self.acc.mac_frames_tx,
            "per-node transmit counts disagree with the global counter"
        );
        assert_eq!(
            self.acc.generated,
            self.acc.delivered + self.acc.dropped_total() + in_flight,
            "packet custody leak: generated != delivered + dropped + in-flight"
        );
        if self.opts.waypoints {
            for node in 0..self.cfg.nodes {
                let mut lines = String::new();
                for leg in self.mobility.realized_legs(node) {
                    let _ = writeln!(
                        lines,
                        "{node}\t{}\t{},{}\t{},{}\t{}",
                        leg.depart_at, leg.from.x, leg.from.y, leg.to.x, leg.to.y, leg.speed
                    );
                }
                self.traces.waypoints.push_str(&lines);
            }
        }
        let ledgers: Vec<EnergyLedger> = self.nodes.iter().map(|n| n.energy.clone()).collect();
        for ledger in &ledgers {
            let total =
                ledger.residual + ledger.consumed_tx + ledger.consumed_rx + ledger.consumed_idle;
            assert!(
                ((total - self.cfg.energy.initial_energy) / self.cfg.energy.initial_energy).abs()
                    < 1e-9,
                "energy conservation violated: {total}"
            );
        }
        let report = finalize(
            &self.acc,
            self.cfg.duration,
            u64::from(self.cfg.traffic.packet_bytes) * 8,
            &ledgers,
            self.cfg.energy.count_idle_in_metric,
        );
        if let Some(load) = report.mac_load {
            let tx = self.acc.mac_frames_tx as f64;
            assert!(
                (load * report.delivered as f64 - tx).abs() <= 1e-9 * tx.max(1.0),
                "mac_load identity violated"
            );
        }
        SimOutput {
            record: RunRecord {
                nodes: self.cfg.nodes,
                protocol: self.cfg.protocol,
                seed: self.cfg.seed,
                report,
                in_flight_at_end: in_flight,
            },
            traces: self.traces,
            ledgers,
            ext_gate_draws: self.streams.draw_count(StreamLabel::ExtGate),
            noroute_at_source: self.noroute_at_source,
            noroute_in_transit: self.noroute_in_transit,
        }
    }
}

/// One complete deterministic run with no traces recorded.
pub fn run_single(cfg: &ScenarioConfig) -> SimOutput {
    Simulation::new(cfg.clone(), TraceOptions::default()).run()
}
