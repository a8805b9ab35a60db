//! Scenario configuration: a sectioned `key = value` text format with `#`
//! comments, full defaults for every field, strict unknown-key rejection,
//! and a canonical emitter so configs round-trip exactly.

use std::fmt;

use thiserror::Error;

use crate::radio::{EnergyParams, PropagationVariant, RadioParams};
use crate::routing::ExtParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Aodv,
    AodvExt,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Aodv => "aodv",
            Protocol::AodvExt => "aodv_ext",
        }
    }

    pub fn from_name(name: &str) -> Option<Protocol> {
        match name {
            "aodv" => Some(Protocol::Aodv),
            "aodv_ext" => Some(Protocol::AodvExt),
            _ => None,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacParams {
    pub queue_capacity: usize,
    /// Upper bound of the pre-transmission jitter draw for unicast frames,
    /// seconds.
    pub jitter_max: f64,
    /// Jitter bound for broadcast frames. Flood rebroadcasts all fire off
    /// the same arrival, so they need a much wider spread than unicasts to
    /// have any chance of interleaving.
    pub broadcast_jitter_max: f64,
    /// How long a signal must have been on the air before carrier sense can
    /// detect it, seconds. Two nodes starting within this window of each
    /// other are mutually blind and their frames collide.
    pub sense_latency: f64,
    /// Fixed per-frame MAC/PHY overhead added to every payload.
    pub header_bytes: u32,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams {
            queue_capacity: 50,
            jitter_max: 0.002,
            broadcast_jitter_max: 0.010,
            sense_latency: 0.0001,
            header_bytes: 58,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficParams {
    pub flows: u32,
    pub packet_bytes: u32,
    /// Packets per second per flow.
    pub rate: f64,
    pub start: f64,
    pub stop: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        TrafficParams {
            flows: 10,
            packet_bytes: 512,
            rate: 4.0,
            start: 10.0,
            stop: 190.0,
        }
    }
}

/// Protocol timing constants the routing layer runs on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AodvParams {
    /// Beacon period, seconds; 0 disables HELLO beacons entirely.
    pub hello_interval: f64,
    /// How long a heard neighbor stays in the one-hop table.
    pub neighbor_freshness: f64,
    pub route_lifetime: f64,
    /// How long a discovery waits for a reply before retrying.
    pub reply_wait: f64,
    pub rreq_retries: u32,
    /// Packets a source parks while discovery runs.
    pub buffer_capacity: usize,
    pub buffer_timeout: f64,
    pub data_ttl: u8,
}

impl Default for AodvParams {
    fn default() -> Self {
        AodvParams {
            hello_interval: 1.0,
            neighbor_freshness: 2.5,
            route_lifetime: 10.0,
            reply_wait: 1.0,
            rreq_retries: 2,
            buffer_capacity: 64,
            buffer_timeout: 5.0,
            data_ttl: 32,
        }
    }
}

/// Everything one simulation run depends on. A value of this type plus the
/// code version fully determines every output byte.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub area_width: f64,
    pub area_height: f64,
    pub nodes: u32,
    pub v_min: f64,
    pub v_max: f64,
    pub pause: f64,
    pub duration: f64,
    pub seed: u64,
    pub protocol: Protocol,
    pub radio: RadioParams,
    pub energy: EnergyParams,
    pub mac: MacParams,
    pub ext: ExtParams,
    pub traffic: TrafficParams,
    pub aodv: AodvParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            area_width: 800.0,
            area_height: 800.0,
            nodes: 20,
            v_min: 1.0,
            v_max: 40.0,
            pause: 0.0,
            duration: 200.0,
            seed: 1,
            protocol: Protocol::Aodv,
            radio: RadioParams::default(),
            energy: EnergyParams::default(),
            mac: MacParams::default(),
            ext: ExtParams::default(),
            traffic: TrafficParams::default(),
            aodv: AodvParams::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("line {line}: key `{key}` appears before any [section] header")]
    OrphanKey { line: usize, key: String },
    #[error("line {line}: {key}: {message}")]
    InvalidValue {
        line: usize,
        key: String,
        message: String,
    },
    #[error("{0}")]
    Constraint(String),
}

struct Cursor {
    line: usize,
    key: String,
}

impl Cursor {
    fn invalid(&self, message: impl Into<String>) -> ConfigError {
        ConfigError::InvalidValue {
            line: self.line,
            key: self.key.clone(),
            message: message.into(),
        }
    }

    fn f64(&self, text: &str) -> Result<f64, ConfigError> {
        let v: f64 = text
            .parse()
            .map_err(|_| self.invalid(format!("not a number: `{text}`")))?;
        if !v.is_finite() {
            return Err(self.invalid("must be finite"));
        }
        Ok(v)
    }

    fn int<T: std::str::FromStr>(&self, text: &str) -> Result<T, ConfigError> {
        text.parse()
            .map_err(|_| self.invalid(format!("not a valid integer: `{text}`")))
    }

    fn bool(&self, text: &str) -> Result<bool, ConfigError> {
        match text {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(self.invalid(format!("expected true or false, got `{text}`"))),
        }
    }
}

/// Parses a configuration document, applying defaults for absent keys. The
/// empty document yields the default scenario.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = ScenarioConfig::default();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Syntax {
                    line,
                    text: content.to_string(),
                })?
                .trim();
            if !matches!(name, "radio" | "energy" | "mac" | "ext" | "traffic" | "sim") {
                return Err(ConfigError::UnknownSection {
                    line,
                    name: name.to_string(),
                });
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            text: content.to_string(),
        })?;
        let key = key.trim().to_string();
        let value = value.trim();
        let section = section.as_deref().ok_or_else(|| ConfigError::OrphanKey {
            line,
            key: key.clone(),
        })?;
        let at = Cursor {
            line,
            key: key.clone(),
        };
        apply_key(&mut cfg, section, &key, value, &at)?;
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn apply_key(
    cfg: &mut ScenarioConfig,
    section: &str,
    key: &str,
    value: &str,
    at: &Cursor,
) -> Result<(), ConfigError> {
    let unknown = || ConfigError::UnknownKey {
        line: at.line,
        section: section.to_string(),
        key: key.to_string(),
    };
    match section {
        "radio" => match key {
            "p_t" => cfg.radio.p_t = at.f64(value)?,
            "g_t" => cfg.radio.g_t = at.f64(value)?,
            "g_r" => cfg.radio.g_r = at.f64(value)?,
            "h_t" => cfg.radio.h_t = at.f64(value)?,
            "h_r" => cfg.radio.h_r = at.f64(value)?,
            "lambda" => cfg.radio.lambda = at.f64(value)?,
            "rx_thresh" => cfg.radio.rx_thresh = at.f64(value)?,
            "cs_thresh" => cfg.radio.cs_thresh = at.f64(value)?,
            "bitrate" => cfg.radio.bitrate = at.f64(value)?,
            "propagation_variant" => {
                cfg.radio.variant = match value {
                    "paper-two-ray" => PropagationVariant::PaperTwoRay,
                    "standard-two-ray" => PropagationVariant::StandardTwoRay,
                    _ => return Err(at.invalid("expected paper-two-ray or standard-two-ray")),
                }
            }
            _ => return Err(unknown()),
        },
        "energy" => match key {
            "p_tx" => cfg.energy.p_tx = at.f64(value)?,
            "p_rx" => cfg.energy.p_rx = at.f64(value)?,
            "p_idle" => cfg.energy.p_idle = at.f64(value)?,
            "initial_energy" => cfg.energy.initial_energy = at.f64(value)?,
            "count_idle_in_metric" => cfg.energy.count_idle_in_metric = at.bool(value)?,
            _ => return Err(unknown()),
        },
        "mac" => match key {
            "queue_capacity" => cfg.mac.queue_capacity = at.int(value)?,
            "jitter_max" => cfg.mac.jitter_max = at.f64(value)?,
            "broadcast_jitter_max" => cfg.mac.broadcast_jitter_max = at.f64(value)?,
            "sense_latency" => cfg.mac.sense_latency = at.f64(value)?,
            "header_bytes" => cfg.mac.header_bytes = at.int(value)?,
            _ => return Err(unknown()),
        },
        "ext" => match key {
            "d" => cfg.ext.d = at.int(value)?,
            "c_f" => cfg.ext.c_f = at.f64(value)?,
            _ => return Err(unknown()),
        },
        "traffic" => match key {
            "flows" => cfg.traffic.flows = at.int(value)?,
            "packet_bytes" => cfg.traffic.packet_bytes = at.int(value)?,
            "rate" => cfg.traffic.rate = at.f64(value)?,
            "start" => cfg.traffic.start = at.f64(value)?,
            "stop" => cfg.traffic.stop = at.f64(value)?,
            _ => return Err(unknown()),
        },
        "sim" => match key {
            "area_width" => cfg.area_width = at.f64(value)?,
            "area_height" => cfg.area_height = at.f64(value)?,
            "nodes" => cfg.nodes = at.int(value)?,
            "v_min" => cfg.v_min = at.f64(value)?,
            "v_max" => cfg.v_max = at.f64(value)?,
            "pause" => cfg.pause = at.f64(value)?,
            "duration" => cfg.duration = at.f64(value)?,
            "seed" => cfg.seed = at.int(value)?,
            "protocol" => {
                cfg.protocol = Protocol::from_name(value)
                    .ok_or_else(|| at.invalid("expected aodv or aodv_ext"))?
            }
            "hello_interval" => cfg.aodv.hello_interval = at.f64(value)?,
            "neighbor_freshness" => cfg.aodv.neighbor_freshness = at.f64(value)?,
            "route_lifetime" => cfg.aodv.route_lifetime = at.f64(value)?,
            "reply_wait" => cfg.aodv.reply_wait = at.f64(value)?,
            "rreq_retries" => cfg.aodv.rreq_retries = at.int(value)?,
            "buffer_capacity" => cfg.aodv.buffer_capacity = at.int(value)?,
            "buffer_timeout" => cfg.aodv.buffer_timeout = at.f64(value)?,
            "data_ttl" => cfg.aodv.data_ttl = at.int(value)?,
            _ => return Err(unknown()),
        },
        _ => unreachable!("section names are checked at the header"),
    }
    Ok(())
}

/// Cross-field checks; every rejected config names the offending constraint.
pub fn validate(cfg: &ScenarioConfig) -> Result<(), ConfigError> {
    let fail = |msg: &str| Err(ConfigError::Constraint(msg.to_string()));
    if cfg.area_width <= 0.0 || cfg.area_height <= 0.0 {
        return fail("sim.area_width and sim.area_height must be positive");
    }
    if cfg.nodes < 2 {
        return fail("sim.nodes must be at least 2");
    }
    if cfg.v_min < 0.0 || cfg.v_min > cfg.v_max {
        return fail("sim speed range requires 0 <= v_min <= v_max");
    }
    if cfg.pause < 0.0 {
        return fail("sim.pause must be nonnegative");
    }
    if cfg.duration <= 0.0 {
        return fail("sim.duration must be positive");
    }
    let r = &cfg.radio;
    if [
        r.p_t,
        r.g_t,
        r.g_r,
        r.h_t,
        r.h_r,
        r.lambda,
        r.rx_thresh,
        r.cs_thresh,
        r.bitrate,
    ]
    .iter()
    .any(|&v| v <= 0.0)
    {
        return fail("all [radio] physical fields must be positive");
    }
    if r.cs_thresh > r.rx_thresh {
        return fail("radio.cs_thresh must not exceed radio.rx_thresh");
    }
    let e = &cfg.energy;
    if e.p_tx <= 0.0 || e.p_rx <= 0.0 || e.p_idle < 0.0 || e.initial_energy <= 0.0 {
        return fail("[energy] powers must be positive (p_idle may be 0)");
    }
    if cfg.mac.queue_capacity < 1 {
        return fail("mac.queue_capacity must be at least 1");
    }
    if cfg.mac.jitter_max < 0.0 {
        return fail("mac.jitter_max must be nonnegative");
    }
    if cfg.mac.broadcast_jitter_max < 0.0 {
        return fail("mac.broadcast_jitter_max must be nonnegative");
    }
    if cfg.mac.sense_latency < 0.0 {
        return fail("mac.sense_latency must be nonnegative");
    }
    if cfg.ext.d < 1 {
        return fail("ext.d must be at least 1");
    }
    if !(cfg.ext.c_f > 0.0 && cfg.ext.c_f <= 1.0) {
        return fail("ext.c_f must lie in (0, 1]");
    }
    let t = &cfg.traffic;
    if t.packet_bytes < 1 {
        return fail("traffic.packet_bytes must be at least 1");
    }
    if t.rate <= 0.0 {
        return fail("traffic.rate must be positive");
    }
    if t.start < 0.0 || t.start >= t.stop {
        return fail("traffic window requires 0 <= start < stop");
    }
    let pairs = u64::from(cfg.nodes) * u64::from(cfg.nodes - 1);
    if u64::from(t.flows) > pairs {
        return fail("traffic.flows exceeds the number of ordered node pairs");
    }
    let a = &cfg.aodv;
    if a.hello_interval < 0.0 {
        return fail("sim.hello_interval must be nonnegative (0 disables HELLO)");
    }
    if a.neighbor_freshness <= 0.0
        || a.route_lifetime <= 0.0
        || a.reply_wait <= 0.0
        || a.buffer_timeout <= 0.0
    {
        return fail("sim protocol timers must be positive");
    }
    if a.buffer_capacity < 1 {
        return fail("sim.buffer_capacity must be at least 1");
    }
    if a.data_ttl < 1 {
        return fail("sim.data_ttl must be at least 1");
    }
    Ok(())
}

/// Canonical text form: fixed section and key order, shortest-roundtrip
/// numbers, so `parse(emit(c)) == c` for every valid config.
pub fn emit(cfg: &ScenarioConfig) -> String {
    let variant = match cfg.radio.variant {
        PropagationVariant::PaperTwoRay => "paper-two-ray",
        PropagationVariant::StandardTwoRay => "standard-two-ray",
    };
    format!(
        "[sim]\n\
         area_width = {}\n\
         area_height = {}\n\
         nodes = {}\n\
         v_min = {}\n\
         v_max = {}\n\
         pause = {}\n\
         duration = {}\n\
         seed = {}\n\
         protocol = {}\n\
         hello_interval = {}\n\
         neighbor_freshness = {}\n\
         route_lifetime = {}\n\
         reply_wait = {}\n\
         rreq_retries = {}\n\
         buffer_capacity = {}\n\
         buffer_timeout = {}\n\
         data_ttl = {}\n\
         \n\
         [radio]\n\
         p_t = {}\n\
         g_t = {}\n\
         g_r = {}\n\
         h_t = {}\n\
         h_r = {}\n\
         lambda = {}\n\
         rx_thresh = {}\n\
         cs_thresh = {}\n\
         bitrate = {}\n\
         propagation_variant = {}\n\
         \n\
         [energy]\n\
         p_tx = {}\n\
         p_rx = {}\n\
         p_idle = {}\n\
         initial_energy = {}\n\
         count_idle_in_metric = {}\n\
         \n\
         [mac]\n\
         queue_capacity = {}\n\
         jitter_max = {}\n\
         broadcast_jitter_max = {}\n\
         sense_latency = {}\n\
         header_bytes = {}\n\
         \n\
         [ext]\n\
         d = {}\n\
         c_f = {}\n\
         \n\
         [traffic]\n\
         flows = {}\n\
         packet_bytes = {}\n\
         rate = {}\n\
         start = {}\n\
         stop = {}\n",
        cfg.area_width,
        cfg.area_height,
        cfg.nodes,
        cfg.v_min,
        cfg.v_max,
        cfg.pause,
        cfg.duration,
        cfg.seed,
        cfg.protocol,
        cfg.aodv.hello_interval,
        cfg.aodv.neighbor_freshness,
        cfg.aodv.route_lifetime,
        cfg.aodv.reply_wait,
        cfg.aodv.rreq_retries,
        cfg.aodv.buffer_capacity,
        cfg.aodv.buffer_timeout,
        cfg.aodv.data_ttl,
        cfg.radio.p_t,
        cfg.radio.g_t,
        cfg.radio.g_r,
        cfg.radio.h_t,
        cfg.radio.h_r,
        cfg.radio.lambda,
        cfg.radio.rx_thresh,
        cfg.radio.cs_thresh,
        cfg.radio.bitrate,
        variant,
        cfg.energy.p_tx,
        cfg.energy.p_rx,
        cfg.energy.p_idle,
        cfg.energy.initial_energy,
        cfg.energy.count_idle_in_metric,
        cfg.mac.queue_capacity,
        cfg.mac.jitter_max,
        cfg.mac.broadcast_jitter_max,
        cfg.mac.sense_latency,
        cfg.mac.header_bytes,
        cfg.ext.d,
        cfg.ext.c_f,
        cfg.traffic.flows,
        cfg.traffic.packet_bytes,
        cfg.traffic.rate,
        cfg.traffic.start,
        cfg.traffic.stop,
    )
}

#[cfg(test)]
mod tests {
    #![allow(clippy::field_reassign_with_default)]

    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_document_yields_paper_defaults() {
        let cfg = parse_scenario("").unwrap();
        assert_eq!((cfg.area_width, cfg.area_height), (800.0, 800.0));
        assert_eq!(cfg.mac.queue_capacity, 50);
        assert_eq!(cfg.energy.p_tx, 0.1819);
        assert_eq!(cfg.energy.p_rx, 0.0501);
        assert_eq!(cfg.energy.p_idle, 0.0350);
        assert_eq!(cfg.energy.initial_energy, 1000.0);
        assert_eq!(cfg.ext.d, 5);
        assert_eq!(cfg.ext.c_f, 1.0);
        assert_eq!(cfg, ScenarioConfig::default());
    }

    #[test]
    fn control_factor_above_one_is_rejected() {
        let err = parse_scenario("[ext]\nc_f = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("(0, 1]"), "{err}");
        assert!(parse_scenario("[ext]\nc_f = 0\n").is_err());
        assert!(parse_scenario("[ext]\nc_f = 1.0\n").is_ok());
    }

    #[test]
    fn default_config_round_trips() {
        let cfg = ScenarioConfig::default();
        assert_eq!(parse_scenario(&emit(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn explicit_d_round_trips() {
        let cfg = parse_scenario("[ext]\nd = 5\n").unwrap();
        let again = parse_scenario(&emit(&cfg)).unwrap();
        assert_eq!(again.ext.d, 5);
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let err = parse_scenario("[radio]\np_t = 1\nwavelenght = 3\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                line: 3,
                section: "radio".into(),
                key: "wavelenght".into()
            }
        );
    }

    #[test]
    fn unknown_section_is_rejected() {
        let err = parse_scenario("[radar]\nx = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownSection { line: 1, .. }));
    }

    #[test]
    fn key_outside_a_section_is_rejected() {
        let err = parse_scenario("nodes = 10\n").unwrap_err();
        assert!(matches!(err, ConfigError::OrphanKey { line: 1, .. }));
    }

    #[test]
    fn malformed_line_reports_syntax_error() {
        let err = parse_scenario("[sim]\nnodes 10\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = parse_scenario("# scenario\n\n[sim]\nnodes = 30  # dense\n").unwrap();
        assert_eq!(cfg.nodes, 30);
    }

    #[test]
    fn bad_number_reports_key_and_line() {
        let err = parse_scenario("[sim]\nduration = fast\n").unwrap_err();
        assert!(err.to_string().contains("duration"));
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn cross_field_constraints_are_enforced() {
        assert!(parse_scenario("[sim]\nnodes = 1\n").is_err());
        assert!(parse_scenario("[sim]\nv_min = 30\nv_max = 10\n").is_err());
        assert!(parse_scenario("[radio]\ncs_thresh = 1.0\nrx_thresh = 0.5\n").is_err());
        assert!(parse_scenario("[traffic]\nflows = 500\n").is_err());
        assert!(parse_scenario("[sim]\nnodes = 23\n[traffic]\nflows = 500\n").is_ok());
    }

    proptest! {
        #[test]
        fn arbitrary_valid_configs_round_trip(
            nodes in 2u32..60,
            seed in any::<u64>(),
            v_max in 0.0f64..40.0,
            pause in 0.0f64..30.0,
            rate in 0.1f64..20.0,
            c_f in 0.01f64..=1.0,
            d in 1u32..20,
            ext in any::<bool>(),
            idle in any::<bool>(),
        ) {
            let mut cfg = ScenarioConfig::default();
            cfg.nodes = nodes;
            cfg.seed = seed;
            cfg.v_min = 0.0;
            cfg.v_max = v_max;
            cfg.pause = pause;
            cfg.traffic.rate = rate;
            cfg.traffic.flows = cfg.traffic.flows.min(nodes * (nodes - 1));
            cfg.ext.c_f = c_f;
            cfg.ext.d = d;
            cfg.protocol = if ext { Protocol::AodvExt } else { Protocol::Aodv };
            cfg.energy.count_idle_in_metric = idle;
            let parsed = parse_scenario(&emit(&cfg)).unwrap();
            prop_assert_eq!(parsed, cfg);
        }
    }
}
