//! End-to-end checks on the smallest possible network: two nodes, one flow.

#![allow(clippy::field_reassign_with_default)]

use manet_sim::config::ScenarioConfig;
use manet_sim::mobility::{MobilityModel, Position, WaypointLeg};
use manet_sim::sim::{SimOutput, Simulation, TraceOptions};
use manet_sim::traffic::CbrFlow;

fn static_leg(x: f64, y: f64) -> Vec<WaypointLeg> {
    let p = Position { x, y };
    vec![WaypointLeg {
        from: p,
        to: p,
        depart_at: 0.0,
        arrive_at: 0.0,
        speed: 0.0,
    }]
}

fn pair_config() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.nodes = 2;
    cfg.duration = 30.0;
    cfg.traffic.flows = 1;
    cfg.traffic.start = 2.0;
    cfg.traffic.stop = 25.0;
    cfg
}

fn run_pair(cfg: ScenarioConfig, separation: f64) -> SimOutput {
    let mobility = MobilityModel::from_legs(
        cfg.area_width,
        cfg.area_height,
        vec![static_leg(0.0, 0.0), static_leg(separation, 0.0)],
    );
    let mut sim = Simulation::with_mobility(cfg.clone(), TraceOptions::default(), mobility);
    sim.set_flows(vec![CbrFlow {
        src: 0,
        dst: 1,
        packet_bytes: cfg.traffic.packet_bytes,
        interval: 1.0 / cfg.traffic.rate,
        start_at: cfg.traffic.start,
        stop_at: cfg.traffic.stop,
    }]);
    sim.run()
}

#[test]
fn neighbors_in_range_deliver_almost_everything() {
    let out = run_pair(pair_config(), 100.0);
    let r = &out.record.report;
    assert!(r.generated > 50, "traffic never started: {}", r.generated);
    assert!(
        r.delivered as f64 >= 0.95 * r.generated as f64,
        "single-hop delivery collapsed: {} of {}",
        r.delivered,
        r.generated
    );
    assert!(r.control_tx.rreq >= 1, "no discovery happened");
    assert!(r.control_tx.rrep >= 1, "destination never answered");
    assert!(r.control_tx.hello > 0, "beacons disabled?");
    assert!(r.mean_delay_s.unwrap() < 0.1, "one hop should be quick");
}

#[test]
fn nodes_out_of_range_deliver_nothing() {
    // 1 km apart: far beyond both decode and carrier-sense range.
    let out = run_pair(pair_config(), 1000.0);
    let r = &out.record.report;
    assert_eq!(r.delivered, 0);
    assert!(r.generated > 0);
    assert!(
        r.drop_noroute > 0,
        "failed discoveries should shed the buffered packets"
    );
    assert_eq!(r.control_tx.rrep, 0);
    // Every retry wave is three RREQ transmissions by the source.
    assert!(r.control_tx.rreq >= 3);
}

#[test]
fn transmit_energy_is_exactly_airtime_times_power() {
    // Scripted exchange: no beacons, both routes warm, so the only frames on
    // the air are the K data frames.
    let mut cfg = pair_config();
    cfg.aodv.hello_interval = 0.0;
    // Without beacons the scripted links must stay trusted for the whole run.
    cfg.aodv.neighbor_freshness = 1e9;
    cfg.energy.p_idle = 0.0;
    cfg.traffic.rate = 4.0;
    cfg.traffic.start = 0.0;
    let k = 80_u64;
    cfg.traffic.stop = k as f64 * 0.25;
    cfg.duration = cfg.traffic.stop + 2.0;

    let mobility = MobilityModel::from_legs(
        cfg.area_width,
        cfg.area_height,
        vec![static_leg(0.0, 0.0), static_leg(150.0, 0.0)],
    );
    let mut sim = Simulation::with_mobility(cfg.clone(), TraceOptions::default(), mobility);
    sim.set_flows(vec![CbrFlow {
        src: 0,
        dst: 1,
        packet_bytes: cfg.traffic.packet_bytes,
        interval: 1.0 / cfg.traffic.rate,
        start_at: cfg.traffic.start,
        stop_at: cfg.traffic.stop,
    }]);
    sim.install_route(0, 1, 1, 1);
    sim.install_route(1, 0, 0, 1);
    let out = sim.run();

    let r = &out.record.report;
    assert_eq!(r.generated, k);
    assert_eq!(r.delivered, k);
    assert_eq!(out.record.in_flight_at_end, 0);
    assert_eq!(r.control_tx.total(), 0, "no control traffic was scripted");

    let bits = (u64::from(cfg.mac.header_bytes) + u64::from(cfg.traffic.packet_bytes)) * 8;
    let expect_tx = k as f64 * (bits as f64 / cfg.radio.bitrate) * cfg.energy.p_tx;
    let expect_rx = k as f64 * (bits as f64 / cfg.radio.bitrate) * cfg.energy.p_rx;
    let tx = out.ledgers[0].consumed_tx;
    let rx = out.ledgers[1].consumed_rx;
    assert!(
        ((tx - expect_tx) / expect_tx).abs() < 1e-9,
        "tx energy {tx} != {expect_tx}"
    );
    assert!(
        ((rx - expect_rx) / expect_rx).abs() < 1e-9,
        "rx energy {rx} != {expect_rx}"
    );
    assert_eq!(out.ledgers[0].consumed_rx, 0.0);
    assert_eq!(out.ledgers[1].consumed_tx, 0.0);
    for ledger in &out.ledgers {
        let total =
            ledger.residual + ledger.consumed_tx + ledger.consumed_rx + ledger.consumed_idle;
        assert!(((total - cfg.energy.initial_energy) / cfg.energy.initial_energy).abs() < 1e-9);
    }
}
