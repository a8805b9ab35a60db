//! Deterministic discrete-event simulator for on-demand route discovery in
//! mobile ad-hoc networks.

pub mod config;
pub mod engine;
pub mod mac;
pub mod metrics;
pub mod mobility;
pub mod radio;
pub mod routing;
pub mod sim;
pub mod sweep;
pub mod traffic;

/// Compiles and runs every code block in the user guide (`book/`) as a
/// doc-test, so the book can never drift from the library it documents.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(event_engine, "../../../book/src/event-engine.md");
    chapter!(mobility, "../../../book/src/mobility.md");
    chapter!(radio_energy, "../../../book/src/radio-energy.md");
    chapter!(mac_layer, "../../../book/src/mac-layer.md");
    chapter!(route_discovery, "../../../book/src/route-discovery.md");
    chapter!(density_gate, "../../../book/src/density-gate.md");
    chapter!(traffic_metrics, "../../../book/src/traffic-metrics.md");
    chapter!(configuration, "../../../book/src/configuration.md");
    chapter!(sweeps_cli, "../../../book/src/sweeps-cli.md");
}
