//! Command-line front end: single runs, sweeps, and baseline comparisons.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 when a
//! `--require` threshold fails. CSV goes to `--out` or stdout; traces go to
//! stderr so they never mix with the report.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use manet_sim::config::{parse_scenario, validate, Protocol, ScenarioConfig};
use manet_sim::sim::{Simulation, TraceOptions};
use manet_sim::sweep::{
    check_requirement, compare, parse_requirement, render_compare, run_sweep, to_csv, SweepSpec,
};

#[derive(Parser, Debug)]
#[command(
    name = "manet-sim",
    about = "Deterministic ad-hoc network simulator comparing flooding and density-gated route discovery",
    version
)]
struct Cli {
    /// Scenario configuration file; defaults apply when absent.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Run the node-count x protocol x seed sweep instead of a single run.
    #[arg(long)]
    sweep: bool,

    /// Number of seeds per sweep cell, counting up from the base seed.
    #[arg(long, value_name = "K", default_value_t = 5)]
    seeds: u64,

    /// Comma-separated protocols for the sweep (default: both).
    #[arg(long, value_name = "LIST")]
    protocols: Option<String>,

    /// Comma-separated node counts for the sweep.
    #[arg(long, value_name = "LIST", default_value = "10,20,30,40,50")]
    nodes: String,

    /// Write the CSV report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Trace streams to print on stderr (single runs only); repeatable,
    /// comma-separated. One of: events, routing, waypoints.
    #[arg(long, value_name = "STREAM")]
    trace: Vec<String>,

    /// Worker threads for sweeps. Output bytes do not depend on this.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,

    /// Run a sweep over both named protocols and print the percent-change
    /// table of VARIANT against BASE.
    #[arg(long, value_name = "BASE:VARIANT")]
    compare: Option<String>,

    /// Threshold on a compared metric, e.g. `dropped<=0.6` or
    /// `throughput_pkt_per_ms>=1.05@50`; repeatable; violation exits 3.
    #[arg(long, value_name = "EXPR", requires = "compare")]
    require: Vec<String>,
}

/// Anything that should stop the program with a diagnostic.
enum Failure {
    Config(String),
    Requirement(String),
}

impl Failure {
    fn config(msg: impl Into<String>) -> Failure {
        Failure::Config(msg.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Requirement(msg)) => {
            eprintln!("requirement failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let base = load_config(cli.config.as_deref())?;

    let sweeping = cli.sweep || cli.compare.is_some();
    if sweeping {
        if !cli.trace.is_empty() {
            return Err(Failure::config("--trace applies to single runs only"));
        }
        run_sweep_mode(&cli, base)
    } else {
        run_single_mode(&cli, base)
    }
}

fn load_config(path: Option<&std::path::Path>) -> Result<ScenarioConfig, Failure> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
            parse_scenario(&text).map_err(|e| Failure::config(e.to_string()))?
        }
        None => ScenarioConfig::default(),
    };
    validate(&cfg).map_err(|e| Failure::config(e.to_string()))?;
    Ok(cfg)
}

fn parse_trace_options(streams: &[String]) -> Result<TraceOptions, Failure> {
    let mut opts = TraceOptions::default();
    for chunk in streams.iter().flat_map(|s| s.split(',')) {
        match chunk.trim() {
            "events" => opts.events = true,
            "routing" => opts.routing = true,
            "waypoints" => opts.waypoints = true,
            other => {
                return Err(Failure::config(format!(
                    "unknown trace stream `{other}` (expected events, routing, or waypoints)"
                )));
            }
        }
    }
    Ok(opts)
}

fn parse_protocol(name: &str) -> Result<Protocol, Failure> {
    Protocol::from_name(name.trim())
        .ok_or_else(|| Failure::config(format!("unknown protocol `{}`", name.trim())))
}

fn write_report(out: Option<&std::path::Path>, csv: &str) -> Result<(), Failure> {
    match out {
        Some(p) => {
            std::fs::write(p, csv).map_err(|e| Failure::config(format!("{}: {e}", p.display())))
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn run_single_mode(cli: &Cli, cfg: ScenarioConfig) -> Result<(), Failure> {
    let opts = parse_trace_options(&cli.trace)?;
    let output = Simulation::new(cfg.clone(), opts).run();
    eprint!("{}", output.traces.events);
    eprint!("{}", output.traces.routing);
    eprint!("{}", output.traces.waypoints);
    let csv = to_csv(&cfg, std::slice::from_ref(&output.record), false);
    write_report(cli.out.as_deref(), &csv)
}

fn run_sweep_mode(cli: &Cli, base: ScenarioConfig) -> Result<(), Failure> {
    let comparison = match &cli.compare {
        Some(text) => {
            let (b, v) = text
                .split_once(':')
                .ok_or_else(|| Failure::config("--compare expects BASE:VARIANT"))?;
            Some((parse_protocol(b)?, parse_protocol(v)?))
        }
        None => None,
    };

    let protocols = match &cli.protocols {
        Some(list) => list
            .split(',')
            .map(parse_protocol)
            .collect::<Result<Vec<_>, _>>()?,
        None => match comparison {
            Some((b, v)) if b == v => vec![b],
            Some((b, v)) => vec![b, v],
            None => vec![Protocol::Aodv, Protocol::AodvExt],
        },
    };
    if let Some((b, v)) = comparison {
        for p in [b, v] {
            if !protocols.contains(&p) {
                return Err(Failure::config(format!(
                    "--compare protocol {} is not in the sweep's protocol list",
                    p.name()
                )));
            }
        }
    }

    let node_counts = cli
        .nodes
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| Failure::config(format!("bad node count `{}`", s.trim())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let seeds: Vec<u64> = (0..cli.seeds).map(|k| base.seed.wrapping_add(k)).collect();

    let spec = SweepSpec {
        base,
        node_counts,
        protocols,
        seeds,
    };
    let jobs = cli.jobs.unwrap_or_else(default_jobs);
    if jobs == 0 {
        return Err(Failure::config("--jobs must be at least 1"));
    }
    let records = run_sweep(&spec, jobs).map_err(|e| Failure::config(e.to_string()))?;
    let csv = to_csv(&spec.base, &records, true);

    match comparison {
        None => write_report(cli.out.as_deref(), &csv),
        Some((b, v)) => {
            if let Some(p) = cli.out.as_deref() {
                write_report(Some(p), &csv)?;
            }
            let table = compare(&csv, b, v).map_err(|e| Failure::config(e.to_string()))?;
            print!("{}", render_compare(&table));
            let mut violations = Vec::new();
            for text in &cli.require {
                let req = parse_requirement(text).map_err(Failure::Config)?;
                if let Err(msg) = check_requirement(&table, &req) {
                    violations.push(msg);
                }
            }
            if violations.is_empty() {
                Ok(())
            } else {
                Err(Failure::Requirement(violations.join("; ")))
            }
        }
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism()
        .map(usize::from)
        .unwrap_or(1)
}
