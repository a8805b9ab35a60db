//! Batch execution across node counts, protocols, and seeds, plus the CSV
//! table and comparison report built from the results.
//!
//! A sweep is the cross product of its three axes, run in a deterministic
//! order. Workers pull tasks from a shared index, so parallelism changes
//! only wall-clock time: rows are reassembled in task order before anything
//! is written, and every cell is an independent single-threaded simulation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use crate::config::{emit, validate, ConfigError, Protocol, ScenarioConfig};
use crate::sim::{run_single, RunRecord};

/// First line of every CSV this crate emits. Bump the version if the column
/// set ever changes.
pub const CSV_FORMAT_LINE: &str = "# manet-sim csv v1";

/// Column header. The first twenty columns are the stable documented schema;
/// the last two repeat throughput in friendlier units.
pub const CSV_HEADER: &str = "nodes,protocol,seed,dropped,consumed_power_J,\
throughput_pkt_per_ms,mac_load,ctrl_overhead,rreq_tx,rrep_tx,rerr_tx,\
hello_tx,ctrl_rx,generated,delivered,drop_queue,drop_collision,\
drop_noroute,drop_buffer,dead_nodes,throughput_pkt_per_s,throughput_kbit_per_s";

/// The cross product to run: every node count with every protocol and every
/// seed, on top of a shared base scenario.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub node_counts: Vec<u32>,
    pub protocols: Vec<Protocol>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// All three axes nonempty, seeds distinct, and every cell's resolved
    /// config valid.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.node_counts.is_empty() {
            return Err(ConfigError::Constraint(
                "sweep: empty node count list".into(),
            ));
        }
        if self.protocols.is_empty() {
            return Err(ConfigError::Constraint("sweep: empty protocol list".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Constraint("sweep: empty seed list".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(ConfigError::Constraint(
                "sweep: seeds must be distinct".into(),
            ));
        }
        for &n in &self.node_counts {
            let mut cfg = self.base.clone();
            cfg.nodes = n;
            validate(&cfg)?;
        }
        Ok(())
    }

    /// Tasks in emission order: node count outermost, then protocol, then
    /// seed.
    fn tasks(&self) -> Vec<(u32, Protocol, u64)> {
        let mut out =
            Vec::with_capacity(self.node_counts.len() * self.protocols.len() * self.seeds.len());
        for &n in &self.node_counts {
            for &p in &self.protocols {
                for &s in &self.seeds {
                    out.push((n, p, s));
                }
            }
        }
        out
    }
}

/// Runs the whole sweep on up to `jobs` worker threads and returns one record
/// per task, in task order. The output is identical for any worker count.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<Vec<RunRecord>, ConfigError> {
    spec.validate()?;
    let tasks = spec.tasks();
    let workers = jobs.max(1).min(tasks.len());
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let tasks = &tasks;
            let next = &next;
            let base = &spec.base;
            scope.spawn(move || loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(nodes, protocol, seed)) = tasks.get(idx) else {
                    break;
                };
                let mut cfg = base.clone();
                cfg.nodes = nodes;
                cfg.protocol = protocol;
                cfg.seed = seed;
                let record = run_single(&cfg).record;
                if tx.send((idx, record)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);

    let mut indexed: Vec<(usize, RunRecord)> = rx.into_iter().collect();
    indexed.sort_by_key(|(idx, _)| *idx);
    Ok(indexed.into_iter().map(|(_, r)| r).collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NA".into(),
    }
}

fn detail_row(r: &RunRecord) -> String {
    let m = &r.report;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.nodes,
        r.protocol.name(),
        r.seed,
        m.dropped_packets,
        m.consumed_power_j,
        m.throughput_pkt_per_ms,
        fmt_opt(m.mac_load),
        m.control_overhead,
        m.control_tx.rreq,
        m.control_tx.rrep,
        m.control_tx.rerr,
        m.control_tx.hello,
        m.control_rx,
        m.generated,
        m.delivered,
        m.drop_queue,
        m.drop_collision,
        m.drop_noroute,
        m.drop_buffer,
        m.dead_nodes,
        m.throughput_pkt_per_s,
        m.throughput_kbit_per_s,
    )
}

/// Arithmetic mean, or None when any sample is missing. Undefined inputs
/// poison the aggregate rather than silently shrinking the denominator.
fn mean_opt(samples: &[Option<f64>]) -> Option<f64> {
    let mut sum = 0.0;
    for s in samples {
        sum += (*s)?;
    }
    Some(sum / samples.len() as f64)
}

fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

fn aggregate_row(cell: &[&RunRecord]) -> String {
    let g = |f: &dyn Fn(&RunRecord) -> f64| mean(&cell.iter().map(|r| f(r)).collect::<Vec<_>>());
    let mac_load = mean_opt(&cell.iter().map(|r| r.report.mac_load).collect::<Vec<_>>());
    format!(
        "{},{},mean,{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        cell[0].nodes,
        cell[0].protocol.name(),
        g(&|r| r.report.dropped_packets as f64),
        g(&|r| r.report.consumed_power_j),
        g(&|r| r.report.throughput_pkt_per_ms),
        fmt_opt(mac_load),
        g(&|r| r.report.control_overhead as f64),
        g(&|r| r.report.control_tx.rreq as f64),
        g(&|r| r.report.control_tx.rrep as f64),
        g(&|r| r.report.control_tx.rerr as f64),
        g(&|r| r.report.control_tx.hello as f64),
        g(&|r| r.report.control_rx as f64),
        g(&|r| r.report.generated as f64),
        g(&|r| r.report.delivered as f64),
        g(&|r| r.report.drop_queue as f64),
        g(&|r| r.report.drop_collision as f64),
        g(&|r| r.report.drop_noroute as f64),
        g(&|r| r.report.drop_buffer as f64),
        g(&|r| r.report.dead_nodes as f64),
        g(&|r| r.report.throughput_pkt_per_s),
        g(&|r| r.report.throughput_kbit_per_s),
    )
}

/// Renders records to the versioned CSV: format line, the resolved base
/// config echoed as comments, the header, detail rows in record order, and
/// (for sweeps) one `mean` row per (nodes, protocol) cell.
pub fn to_csv(base: &ScenarioConfig, records: &[RunRecord], aggregates: bool) -> String {
    let mut out = String::new();
    out.push_str(CSV_FORMAT_LINE);
    out.push('\n');
    for line in emit(base).lines() {
        if line.is_empty() {
            out.push('#');
        } else {
            out.push_str("# ");
            out.push_str(line);
        }
        out.push('\n');
    }
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&detail_row(r));
        out.push('\n');
    }
    if aggregates {
        let mut i = 0;
        while i < records.len() {
            let key = (records[i].nodes, records[i].protocol);
            let mut cell = Vec::new();
            while i < records.len() && (records[i].nodes, records[i].protocol) == key {
                cell.push(&records[i]);
                i += 1;
            }
            out.push_str(&aggregate_row(&cell));
            out.push('\n');
        }
    }
    out
}

/// One parsed detail row, keyed for pairing.
#[derive(Debug, Clone)]
struct CsvRow {
    nodes: u32,
    protocol: String,
    seed: u64,
    values: Vec<Option<f64>>,
}

/// Metric columns in schema order, excluding the three identity columns.
pub const METRIC_COLUMNS: [&str; 19] = [
    "dropped",
    "consumed_power_J",
    "throughput_pkt_per_ms",
    "mac_load",
    "ctrl_overhead",
    "rreq_tx",
    "rrep_tx",
    "rerr_tx",
    "hello_tx",
    "ctrl_rx",
    "generated",
    "delivered",
    "drop_queue",
    "drop_collision",
    "drop_noroute",
    "drop_buffer",
    "dead_nodes",
    "throughput_pkt_per_s",
    "throughput_kbit_per_s",
];

#[derive(Debug, PartialEq)]
pub enum CompareError {
    /// The CSV text does not carry the expected header row.
    SchemaMismatch(String),
    /// A row failed to parse.
    BadRow { line: usize, message: String },
    /// A protocol requested for comparison has no rows.
    MissingProtocol(String),
    /// The two protocols do not cover the same (nodes, seed) cells.
    MismatchedCells(String),
}

impl std::fmt::Display for CompareError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CompareError::SchemaMismatch(h) => write!(f, "unexpected CSV header: {h}"),
            CompareError::BadRow { line, message } => write!(f, "line {line}: {message}"),
            CompareError::MissingProtocol(p) => write!(f, "no rows for protocol {p}"),
            CompareError::MismatchedCells(m) => write!(f, "mismatched sweep cells: {m}"),
        }
    }
}

impl std::error::Error for CompareError {}

fn parse_detail_rows(csv: &str) -> Result<Vec<CsvRow>, CompareError> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (idx, line) in csv.lines().enumerate() {
        let lineno = idx + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line != CSV_HEADER {
                return Err(CompareError::SchemaMismatch(line.to_string()));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != METRIC_COLUMNS.len() + 3 {
            return Err(CompareError::BadRow {
                line: lineno,
                message: format!(
                    "expected {} fields, got {}",
                    METRIC_COLUMNS.len() + 3,
                    fields.len()
                ),
            });
        }
        if fields[2] == "mean" {
            continue;
        }
        let bad = |message: String| CompareError::BadRow {
            line: lineno,
            message,
        };
        let nodes = fields[0]
            .parse()
            .map_err(|_| bad(format!("bad node count `{}`", fields[0])))?;
        let seed = fields[2]
            .parse()
            .map_err(|_| bad(format!("bad seed `{}`", fields[2])))?;
        let mut values = Vec::with_capacity(METRIC_COLUMNS.len());
        for (name, text) in METRIC_COLUMNS.iter().zip(&fields[3..]) {
            if *text == "NA" {
                values.push(None);
            } else {
                let v = text
                    .parse()
                    .map_err(|_| bad(format!("bad value `{text}` for {name}")))?;
                values.push(Some(v));
            }
        }
        rows.push(CsvRow {
            nodes,
            protocol: fields[1].to_string(),
            seed,
            values,
        });
    }
    if !saw_header {
        return Err(CompareError::SchemaMismatch("<missing>".into()));
    }
    Ok(rows)
}

/// One line of the comparison report: how a metric's seed-paired mean moved
/// from baseline to variant at one network size.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub nodes: u32,
    pub metric: &'static str,
    pub baseline_mean: Option<f64>,
    pub variant_mean: Option<f64>,
    /// Percent change of variant vs baseline. None when either side is
    /// undefined or the baseline is zero with a nonzero variant.
    pub change_pct: Option<f64>,
}

fn cell_means(rows: &[CsvRow], protocol: &str, nodes: u32) -> Vec<Option<f64>> {
    let cell: Vec<&CsvRow> = rows
        .iter()
        .filter(|r| r.protocol == protocol && r.nodes == nodes)
        .collect();
    (0..METRIC_COLUMNS.len())
        .map(|i| mean_opt(&cell.iter().map(|r| r.values[i]).collect::<Vec<_>>()))
        .collect()
}

/// Reads a sweep CSV back and reports, per node count and metric, the percent
/// change of `variant` against `baseline` on seed-paired means. Both
/// protocols must cover exactly the same (nodes, seed) cells.
pub fn compare(
    csv: &str,
    baseline: Protocol,
    variant: Protocol,
) -> Result<Vec<CompareRow>, CompareError> {
    let rows = parse_detail_rows(csv)?;
    let mut node_counts = Vec::new();
    for proto in [baseline, variant] {
        if !rows.iter().any(|r| r.protocol == proto.name()) {
            return Err(CompareError::MissingProtocol(proto.name().to_string()));
        }
    }
    for r in &rows {
        if !node_counts.contains(&r.nodes) {
            node_counts.push(r.nodes);
        }
    }
    for &n in &node_counts {
        let seeds_of = |proto: Protocol| {
            let mut s: Vec<u64> = rows
                .iter()
                .filter(|r| r.protocol == proto.name() && r.nodes == n)
                .map(|r| r.seed)
                .collect();
            s.sort_unstable();
            s
        };
        let (b, v) = (seeds_of(baseline), seeds_of(variant));
        if b != v {
            return Err(CompareError::MismatchedCells(format!(
                "at {n} nodes, {} has seeds {:?} but {} has {:?}",
                baseline.name(),
                b,
                variant.name(),
                v
            )));
        }
    }

    let mut out = Vec::new();
    for &n in &node_counts {
        let b = cell_means(&rows, baseline.name(), n);
        let v = cell_means(&rows, variant.name(), n);
        for (i, &metric) in METRIC_COLUMNS.iter().enumerate() {
            let change_pct = match (b[i], v[i]) {
                (Some(bm), Some(vm)) if bm != 0.0 => Some((vm - bm) / bm * 100.0),
                (Some(bm), Some(vm)) if bm == 0.0 && vm == 0.0 => Some(0.0),
                _ => None,
            };
            out.push(CompareRow {
                nodes: n,
                metric,
                baseline_mean: b[i],
                variant_mean: v[i],
                change_pct,
            });
        }
    }
    Ok(out)
}

/// Renders the comparison as its own small CSV.
pub fn render_compare(rows: &[CompareRow]) -> String {
    let mut out = String::from("nodes,metric,baseline_mean,variant_mean,change_pct\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.nodes,
            r.metric,
            fmt_opt(r.baseline_mean),
            fmt_opt(r.variant_mean),
            fmt_opt(r.change_pct),
        ));
    }
    out
}

/// A CI threshold on the variant-to-baseline ratio of one metric's mean,
/// written `metric<=BOUND` or `metric>=BOUND`, optionally suffixed `@NODES`
/// to check a single network size instead of every one in the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Requirement {
    pub metric: String,
    pub at_most: bool,
    pub bound: f64,
    pub nodes: Option<u32>,
}

pub fn parse_requirement(text: &str) -> Result<Requirement, String> {
    let (expr, nodes) = match text.split_once('@') {
        Some((e, n)) => {
            let nodes = n
                .parse()
                .map_err(|_| format!("bad node count `{n}` in `{text}`"))?;
            (e, Some(nodes))
        }
        None => (text, None),
    };
    let (metric, at_most, bound_text) = if let Some((m, b)) = expr.split_once("<=") {
        (m, true, b)
    } else if let Some((m, b)) = expr.split_once(">=") {
        (m, false, b)
    } else {
        return Err(format!("`{text}`: expected metric<=BOUND or metric>=BOUND"));
    };
    if !METRIC_COLUMNS.contains(&metric) {
        return Err(format!("unknown metric `{metric}`"));
    }
    let bound: f64 = bound_text
        .parse()
        .map_err(|_| format!("bad bound `{bound_text}`"))?;
    Ok(Requirement {
        metric: metric.to_string(),
        at_most,
        bound,
        nodes,
    })
}

/// Checks one threshold against a comparison table. An undefined ratio never
/// satisfies a requirement.
pub fn check_requirement(rows: &[CompareRow], req: &Requirement) -> Result<(), String> {
    let relevant: Vec<&CompareRow> = rows
        .iter()
        .filter(|r| r.metric == req.metric && req.nodes.is_none_or(|n| r.nodes == n))
        .collect();
    if relevant.is_empty() {
        return Err(format!("requirement on {}: no matching rows", req.metric));
    }
    for r in relevant {
        let ratio = match (r.baseline_mean, r.variant_mean) {
            (Some(b), Some(v)) if b != 0.0 => v / b,
            _ => {
                return Err(format!(
                    "requirement on {} at {} nodes: ratio undefined",
                    req.metric, r.nodes
                ));
            }
        };
        let ok = if req.at_most {
            ratio <= req.bound
        } else {
            ratio >= req.bound
        };
        if !ok {
            return Err(format!(
                "requirement on {} at {} nodes: ratio {:.4} violates {} {}",
                req.metric,
                r.nodes,
                ratio,
                if req.at_most { "<=" } else { ">=" },
                req.bound
            ));
        }
    }
    Ok(())
}
