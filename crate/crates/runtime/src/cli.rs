//! The `formation` command line.

use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use clap::{Args, CommandFactory, Parser, Subcommand};
use log::info;

use crate::bridge::{BridgeConfig, BridgeError};
use crate::config::{ConfigError, RunConfig};
use crate::runlog::{export_csv, RunLog};
use crate::scenario::{run_agent, run_in_process, run_supervised, RunError, RunOptions, RunSummary};
use crate::schema_check::check_dir;
use crate::stress::{header_line, run_stress, StressConfig};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PORT_IN_USE: i32 = 3;

pub const RUN_LOG_FILE: &str = "run.ndjson";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Parser)]
#[command(name = "formation", version, about = "Distributed NMPC formation flight over a TCP message bridge")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run a scenario: bridge, simulator and one controller per agent.
    Run(RunArgs),
    /// Measure bridge throughput and jitter with paced publishers.
    Stress(StressArgs),
    /// Convert a run log into per-agent CSV files.
    PlotExport {
        log: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Validate a directory of message schema files.
    SchemaCheck { dir: PathBuf },
    /// Run one agent's controller against an existing bridge.
    #[command(hide = true)]
    Agent(AgentArgs),
}

#[derive(Debug, Args)]
struct PortArgs {
    #[arg(long)]
    host: Option<String>,
    #[arg(long)]
    rx_port: Option<u16>,
    #[arg(long)]
    tx_port: Option<u16>,
    #[arg(long)]
    heartbeat_port: Option<u16>,
}

impl PortArgs {
    fn apply(&self, b: &mut BridgeConfig) {
        if let Some(h) = &self.host {
            b.host = h.clone();
        }
        if let Some(p) = self.rx_port {
            b.rx_port = p;
        }
        if let Some(p) = self.tx_port {
            b.tx_port = p;
        }
        if let Some(p) = self.heartbeat_port {
            b.heartbeat_port = p;
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Simulated duration, s.
    #[arg(long)]
    duration: Option<f64>,
    /// Simulation speed multiplier over wall-clock time.
    #[arg(long)]
    speed: Option<f64>,
    /// Output directory for the run log and summary.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Run every endpoint as a thread of this process.
    #[arg(long)]
    single_process: bool,
    /// Seconds to wait for any one control step.
    #[arg(long, default_value_t = 30.0)]
    step_timeout: f64,
    #[command(flatten)]
    ports: PortArgs,
}

#[derive(Debug, Args)]
struct AgentArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    ns: String,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    speed: Option<f64>,
    #[arg(long, default_value_t = 30.0)]
    step_timeout: f64,
    #[command(flatten)]
    ports: PortArgs,
}

#[derive(Debug, Args)]
struct StressArgs {
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[arg(long, default_value_t = 1)]
    spacecraft: usize,
    /// Target per-topic rate, Hz; repeat for a sweep.
    #[arg(long = "rate", default_values_t = [100.0])]
    rates: Vec<f64>,
    /// Seconds per row.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    /// Directory for stress.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        let usage = Cli::command().render_usage();
        Self::new(EXIT_USAGE, format!("{}\n\n{usage}", message.into()))
    }
}

fn port_in_use(e: &BridgeError) -> Option<u16> {
    match e {
        BridgeError::PortInUse { port } => Some(*port),
        _ => None,
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match &e {
            RunError::Bridge(b) => match port_in_use(b) {
                Some(port) => Failure::new(
                    EXIT_PORT_IN_USE,
                    format!("bridge port {port} is already in use; pick other ports with --rx-port/--tx-port/--heartbeat-port"),
                ),
                None => Failure::new(EXIT_FAILURE, e.to_string()),
            },
            RunError::Scenario(_) => Failure::new(EXIT_USAGE, e.to_string()),
            _ => Failure::new(EXIT_FAILURE, e.to_string()),
        }
    }
}

fn load_config(path: &Path, duration: Option<f64>, speed: Option<f64>, ports: &PortArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e @ ConfigError::Io { .. }) => return Err(Failure::usage(e.to_string())),
        Err(e) => return Err(Failure::new(EXIT_USAGE, format!("invalid scenario: {e}"))),
    };
    if let Some(d) = duration {
        cfg.scenario.duration = d;
    }
    if let Some(s) = speed {
        cfg.scenario.speed = s;
    }
    ports.apply(&mut cfg.bridge);
    cfg.scenario
        .validate()
        .map_err(|e| Failure::new(EXIT_USAGE, format!("invalid scenario: {e}")))?;
    cfg.bridge
        .validate()
        .map_err(|e| Failure::new(EXIT_USAGE, format!("invalid bridge settings: {e}")))?;
    Ok(cfg)
}

fn step_timeout(secs: f64) -> Result<Duration, Failure> {
    Duration::try_from_secs_f64(secs).map_err(|_| Failure::usage(format!("invalid step timeout {secs}")))
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::new(EXIT_FAILURE, format!("{}: {e}", path.display()))
}

fn print_summary(s: &RunSummary) {
    println!(
        "{} steps, {:.1} s simulated in {:.1} s, min separation {:.3} m",
        s.steps, s.sim_time_s, s.wall_time_s, s.min_separation_m
    );
    println!("{:<12} {:>10} {:>10} {:>9} {:>9}", "agent", "max err m", "rms err m", "degraded", "max iter");
    for a in &s.agents {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<12} {:>10} {:>10} {:>9} {:>9}",
            a.ns,
            fmt(a.max_formation_error),
            fmt(a.rms_formation_error),
            a.degraded_steps,
            a.max_iterations
        );
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.scenario, args.duration, args.speed, &args.ports)?;
    fs::create_dir_all(&args.out).map_err(|e| io_failure(&args.out, e))?;
    let opts = RunOptions {
        log_path: Some(args.out.join(RUN_LOG_FILE)),
        step_timeout: step_timeout(args.step_timeout)?,
        ..Default::default()
    };
    info!(
        "running {} agents for {} s at {}x ({})",
        cfg.scenario.agents.len(),
        cfg.scenario.duration,
        cfg.scenario.speed,
        if args.single_process { "threads" } else { "processes" }
    );
    let summary = if args.single_process {
        run_in_process(&cfg.scenario, &cfg.bridge, &opts)?
    } else {
        let exe = std::env::current_exe().map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
        let scenario = &cfg.scenario;
        run_supervised(scenario, &cfg.bridge, &opts, |ns, bridge| {
            Command::new(&exe)
                .arg("agent")
                .arg("--scenario")
                .arg(&args.scenario)
                .args(["--ns", ns])
                .args(["--duration", &scenario.duration.to_string()])
                .args(["--speed", &scenario.speed.to_string()])
                .args(["--step-timeout", &args.step_timeout.to_string()])
                .args(["--host", &bridge.host])
                .args(["--rx-port", &bridge.rx_port.to_string()])
                .args(["--tx-port", &bridge.tx_port.to_string()])
                .args(["--heartbeat-port", &bridge.heartbeat_port.to_string()])
                .stdin(Stdio::null())
                .spawn()
        })?
    };
    let path = args.out.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, json + "\n").map_err(|e| io_failure(&path, e))?;
    print_summary(&summary);
    println!("wrote {} and {}", args.out.join(RUN_LOG_FILE).display(), path.display());
    Ok(())
}

fn cmd_agent(args: &AgentArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.scenario, args.duration, args.speed, &args.ports)?;
    let opts = RunOptions {
        step_timeout: step_timeout(args.step_timeout)?,
        ..Default::default()
    };
    run_agent(&cfg.scenario, &args.ns, &cfg.bridge, &opts)?;
    Ok(())
}

fn cmd_stress(args: &StressArgs) -> Result<(), Failure> {
    let duration = Duration::try_from_secs_f64(args.duration)
        .map_err(|_| Failure::usage(format!("invalid duration {}", args.duration)))?;
    let configs: Vec<StressConfig> = args
        .rates
        .iter()
        .map(|&rate| StressConfig::new(args.speed, args.spacecraft, rate, duration))
        .collect();
    for c in &configs {
        c.validate().map_err(|e| Failure::usage(e.to_string()))?;
    }
    println!("{}", header_line());
    let mut rows = Vec::new();
    for c in &configs {
        let row = run_stress(c).map_err(|e| match &e {
            crate::stress::StressError::Bridge(b) if port_in_use(b).is_some() => {
                Failure::new(EXIT_PORT_IN_USE, e.to_string())
            }
            _ => Failure::new(EXIT_FAILURE, e.to_string()),
        })?;
        println!("{row}");
        rows.push(row);
    }
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        let path = dir.join("stress.json");
        let json = serde_json::to_string_pretty(&rows).expect("report serializes");
        fs::write(&path, json + "\n").map_err(|e| io_failure(&path, e))?;
    }
    Ok(())
}

fn cmd_plot_export(log: &Path, out: &Path) -> Result<(), Failure> {
    let run = RunLog::read(log).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    let files = export_csv(&run, out).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn cmd_schema_check(dir: &Path) -> Result<(), Failure> {
    let report = check_dir(dir).map_err(|e| io_failure(dir, e))?;
    if report.files.is_empty() {
        return Err(Failure::new(EXIT_FAILURE, format!("{}: no .msg files", dir.display())));
    }
    if !report.is_clean() {
        let lines: Vec<String> = report.diagnostics.iter().map(|d| d.to_string()).collect();
        return Err(Failure::new(EXIT_FAILURE, lines.join("\n")));
    }
    println!("{} files, {} messages, no conflicts", report.files.len(), report.schemas.len());
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Agent(a) => cmd_agent(a),
        Cmd::Stress(a) => cmd_stress(a),
        Cmd::PlotExport { log, out } => cmd_plot_export(log, out),
        Cmd::SchemaCheck { dir } => cmd_schema_check(dir),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
