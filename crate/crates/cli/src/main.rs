//! Command-line front end: system ingestion, one subcommand per analysis,
//! CSV emission for the figure data.
//!
//! Exit codes: 0 ok, 2 argument/parse error, 3 validation error, 4 size
//! limit exceeded, 5 Monte-Carlo validation failure.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use coalition_core::asymptotics::{heavy_k_star, light_k_star, regime_crosscheck};
use coalition_core::dynamics::{check_a1, run as run_dynamics};
use coalition_core::mc::validate_we;
use coalition_core::stability::{
    k_star, proportional_payoff, stable_set_scan_with_mode, PessimalMode,
};
use coalition_core::wardrop::{psi, wardrop_split};
use coalition_core::{CoalitionSet, Configuration, Partition, StabilityRule, SystemSpec};

/// Market-split and coalition-stability analysis for pooled loss systems.
///
/// The system is a set of providers (server counts via --agents), a total
/// Poisson arrival rate Λ (--lambda) and a per-server service rate μ (--mu).
/// Customers split across the coalitions of any partition so that all
/// blocking probabilities equalize; the subcommands analyse which coalition
/// structures survive merger/split challenges.
#[derive(Parser)]
#[command(name = "coalitions", version, about, long_about)]
struct Cli {
    /// Comma-separated server counts, one per provider (e.g. 9,7,6,5,3)
    #[arg(long, value_delimiter = ',', global = true)]
    agents: Option<Vec<u32>>,

    /// JSON config file: {"agents":[9,7,6,5,3],"lambda":15.0,"mu":1.0};
    /// explicit flags override file values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Total market arrival rate Λ
    #[arg(long, global = true)]
    lambda: Option<f64>,

    /// Per-server service rate μ (default 1.0)
    #[arg(long, global = true)]
    mu: Option<f64>,

    /// Stability rule: rb-ia, rb-pa, or gb-pa
    #[arg(long, default_value = "rb-ia", global = true)]
    rule: String,

    /// RNG seed for stochastic subcommands
    #[arg(long, default_value_t = 0, global = true)]
    seed: u64,

    /// Λ grid as start:stop:points[:lin|log] (default log)
    #[arg(long, global = true)]
    grid: Option<String>,

    /// Write the primary output to this file instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Compute pessimistic values by exhaustive enumeration instead of the
    /// merged-complement shortcut (stability scans only)
    #[arg(long, global = true)]
    oracle: bool,

    /// Step cap for the dynamics
    #[arg(long, default_value_t = 10_000, global = true)]
    max_steps: usize,

    /// Write the resolved system description as JSON to this path
    #[arg(long, global = true)]
    emit_config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Equilibrium market split for one partition (e.g. "0,1|2|3,4")
    Wardrop {
        /// Blocks separated by '|', provider indices separated by ','
        partition: String,
    },
    /// Classify every partition as stable or blocked under --rule (CSV)
    Stable,
    /// Sweep Λ: maximizing duopoly sizes, blocking, per-server utilization (CSV)
    KstarSweep,
    /// Random merge/split dynamics from an initial partition
    Dynamics {
        /// Starting partition (default: every provider alone)
        #[arg(long)]
        initial: Option<String>,
    },
    /// Monte-Carlo validation of the analytic split
    Validate {
        /// Partition to validate (default: every provider alone)
        #[arg(long)]
        partition: Option<String>,
        /// Arrivals simulated per block
        #[arg(long, default_value_t = 1_000_000)]
        horizon: u64,
        /// Perturb the first block's rate by this percentage (sensitivity check)
        #[arg(long)]
        perturb: Option<f64>,
    },
}

#[derive(Debug, Serialize, Deserialize, Default)]
struct FileConfig {
    agents: Option<Vec<u32>>,
    lambda: Option<f64>,
    mu: Option<f64>,
}

enum CliError {
    Parse(String),
    Core(coalition_core::Error),
    McFailure(String),
    Io(std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Core(coalition_core::Error::SizeLimit { .. }) => 4,
            CliError::Core(_) => 3,
            CliError::McFailure(_) => 5,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Parse(m) => format!("parse error: {m}"),
            CliError::Core(e) => e.to_string(),
            CliError::McFailure(m) => format!("validation failed: {m}"),
            CliError::Io(e) => format!("io error: {e}"),
        }
    }
}

impl From<coalition_core::Error> for CliError {
    fn from(e: coalition_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

/// 12 significant digits, '.' decimal, no separators.
fn fmt_g(x: f64) -> String {
    format!("{x:.11e}")
}

fn resolve_spec(cli: &Cli) -> Result<SystemSpec, CliError> {
    let mut file = FileConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)?;
        file = serde_json::from_str(&text)
            .map_err(|e| CliError::Parse(format!("config {}: {e}", path.display())))?;
    }
    let agents = cli
        .agents
        .clone()
        .or(file.agents)
        .ok_or_else(|| CliError::Parse("no provider list: pass --agents or --config".into()))?;
    let lambda = cli
        .lambda
        .or(file.lambda)
        .ok_or_else(|| CliError::Parse("no arrival rate: pass --lambda or --config".into()))?;
    let mu = cli.mu.or(file.mu).unwrap_or(1.0);
    let spec = SystemSpec::new(&agents, lambda, mu)?;

    if let Some(path) = &cli.emit_config {
        // emit in the caller's original order so the file round-trips
        let mut original = vec![0u32; spec.n_agents()];
        for canonical in 0..spec.n_agents() {
            original[spec.original_index(canonical)] = spec.servers_of(canonical);
        }
        let cfg = FileConfig {
            agents: Some(original),
            lambda: Some(spec.total_rate()),
            mu: Some(spec.service_rate()),
        };
        std::fs::write(path, serde_json::to_string_pretty(&cfg).expect("serializable"))?;
    }
    Ok(spec)
}

fn parse_rule(cli: &Cli) -> Result<StabilityRule, CliError> {
    cli.rule
        .parse::<StabilityRule>()
        .map_err(|_| CliError::Parse(format!("unknown rule '{}'", cli.rule)))
}

/// Parses "0,1|2|3,4" over the caller's provider labels into a canonical
/// partition.
fn parse_partition(spec: &SystemSpec, text: &str) -> Result<Partition, CliError> {
    let mut blocks = Vec::new();
    for part in text.split('|') {
        let mut block = CoalitionSet::EMPTY;
        for token in part.split(',') {
            let token = token.trim();
            if token.is_empty() {
                return Err(CliError::Parse(format!("empty provider label in '{text}'")));
            }
            let label: usize = token
                .parse()
                .map_err(|_| CliError::Parse(format!("bad provider label '{token}'")))?;
            let canonical = spec.canonical_index(label).ok_or_else(|| {
                CliError::Core(coalition_core::Error::Domain(format!(
                    "provider label {label} is out of range"
                )))
            })?;
            block = block.insert(canonical);
        }
        blocks.push(block);
    }
    Ok(Partition::new(spec.n_agents(), blocks)?)
}

/// Renders a canonical block in the caller's labels, ascending.
/// Semicolon-joined so the result stays a single CSV field.
fn block_labels(spec: &SystemSpec, block: CoalitionSet) -> String {
    let mut labels: Vec<usize> = block.members().map(|i| spec.original_index(i)).collect();
    labels.sort_unstable();
    labels
        .iter()
        .map(|l| l.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 && parts.len() != 4 {
        return Err(CliError::Parse(format!(
            "grid '{text}' is not start:stop:points[:lin|log]"
        )));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|_| CliError::Parse(format!("bad grid start '{}'", parts[0])))?;
    let stop: f64 = parts[1]
        .parse()
        .map_err(|_| CliError::Parse(format!("bad grid stop '{}'", parts[1])))?;
    let points: usize = parts[2]
        .parse()
        .map_err(|_| CliError::Parse(format!("bad grid point count '{}'", parts[2])))?;
    let log = match parts.get(3).copied().unwrap_or("log") {
        "log" => true,
        "lin" => false,
        other => return Err(CliError::Parse(format!("grid scale '{other}' is not lin|log"))),
    };
    if points < 2 || start <= 0.0 || stop < start {
        return Err(CliError::Parse(format!("degenerate grid '{text}'")));
    }
    Ok((0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            if log {
                start * (stop / start).powf(t)
            } else {
                start + (stop - start) * t
            }
        })
        .collect())
}

fn write_output(cli: &Cli, text: &str) -> Result<(), CliError> {
    match &cli.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let spec = resolve_spec(cli)?;
    match &cli.command {
        Command::Wardrop { partition } => cmd_wardrop(cli, &spec, partition),
        Command::Stable => cmd_stable(cli, &spec),
        Command::KstarSweep => cmd_kstar_sweep(cli, &spec),
        Command::Dynamics { initial } => cmd_dynamics(cli, &spec, initial.as_deref()),
        Command::Validate {
            partition,
            horizon,
            perturb,
        } => cmd_validate(cli, &spec, partition.as_deref(), *horizon, *perturb),
    }
}

fn cmd_wardrop(cli: &Cli, spec: &SystemSpec, partition: &str) -> Result<(), CliError> {
    let p = parse_partition(spec, partition)?;
    let we = wardrop_split(spec, &p)?;
    let mut out = String::new();
    out.push_str("block,servers,rate,rate_per_server\n");
    for (block, &rate) in p.blocks().iter().zip(we.rates()) {
        let servers = spec.coalition_servers(*block);
        let _ = writeln!(
            out,
            "{},{},{},{}",
            block_labels(spec, *block),
            servers,
            fmt_g(rate),
            fmt_g(rate / f64::from(servers)),
        );
    }
    let _ = writeln!(out, "common_blocking,,{},", fmt_g(we.common_blocking()));
    let _ = writeln!(out, "residual,,{},", fmt_g(we.residual()));
    write_output(cli, &out)
}

fn cmd_stable(cli: &Cli, spec: &SystemSpec) -> Result<(), CliError> {
    let rule = parse_rule(cli)?;
    let mode = if cli.oracle {
        PessimalMode::Oracle
    } else {
        PessimalMode::Fast
    };
    let rows = stable_set_scan_with_mode(spec, rule, mode)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# agents in canonical order: {:?}; rule: {rule}",
        spec.server_counts()
    );
    out.push_str("partition_rgs,size,verdict,payoff_dependent,witness_bits,witness_kind\n");
    for row in rows {
        let (bits, kind) = match &row.witness {
            Some(w) => (w.blocker.bits().to_string(), w.move_kind.to_string()),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.partition.rgs_string(),
            row.partition.size(),
            row.verdict,
            row.payoff_dependent,
            bits,
            kind
        );
    }
    write_output(cli, &out)
}

fn cmd_kstar_sweep(cli: &Cli, spec: &SystemSpec) -> Result<(), CliError> {
    let grid = match &cli.grid {
        Some(text) => parse_grid(text)?,
        None => parse_grid("0.3:300:20:log")?,
    };
    let rows = regime_crosscheck(spec, &grid)?;

    // fixed wide columns: every achievable duopoly size, plus the even split
    let base = k_star(spec)?;
    let mut sizes: Vec<u32> = base.achievable_ks.iter().copied().collect();
    if let Some(half) = &base.half_split {
        sizes.insert(0, half.k);
    }

    let mut out = String::new();
    let _ = writeln!(
        out,
        "# agents in canonical order: {:?}; heavy k* = {}; light k* = {}",
        spec.server_counts(),
        heavy_k_star(spec)?,
        light_k_star(spec)
            .map(|k| k.to_string())
            .unwrap_or_else(|_| "none".into()),
    );
    out.push_str("lambda,k_star_set,k_star_representative,gc_blocking");
    for k in &sizes {
        let _ = write!(out, ",psi_over_lambda_{k}");
    }
    out.push('\n');
    for row in &rows {
        let set = row
            .k_star
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let _ = write!(
            out,
            "{},{},{},{}",
            fmt_g(row.total_rate),
            set,
            row.representative,
            fmt_g(row.gc_blocking)
        );
        let at = spec.with_total_rate(row.total_rate)?;
        for &k in &sizes {
            let point = psi(&at, k)?;
            let _ = write!(out, ",{}", fmt_g(point.psi / row.total_rate));
        }
        out.push('\n');
    }
    write_output(cli, &out)
}

fn cmd_dynamics(cli: &Cli, spec: &SystemSpec, initial: Option<&str>) -> Result<(), CliError> {
    let rule = parse_rule(cli)?;
    if rule == StabilityRule::GbPa {
        return Err(CliError::Parse(
            "dynamics run under the restricted rules (rb-ia, rb-pa)".into(),
        ));
    }
    let p0 = match initial {
        Some(text) => parse_partition(spec, text)?,
        None => Partition::singletons(spec.n_agents()),
    };
    let phi0 = proportional_payoff(spec, &p0)?;
    let cfg0 = Configuration::new(spec, p0, phi0)?;

    let a1 = check_a1(spec)?;
    let trace = run_dynamics(spec, cfg0, rule, cli.seed, cli.max_steps)?;
    let final_cfg = trace.final_configuration();
    let final_blocks: Vec<String> = final_cfg
        .partition()
        .blocks()
        .iter()
        .map(|b| block_labels(spec, *b))
        .collect();

    write_output(cli, &trace.export())?;
    eprintln!(
        "terminal={} steps={} final={} a1_holds={} seed={}",
        trace.terminal,
        trace.steps.len(),
        final_blocks.join("|"),
        a1.holds,
        trace.seed
    );
    Ok(())
}

fn cmd_validate(
    cli: &Cli,
    spec: &SystemSpec,
    partition: Option<&str>,
    horizon: u64,
    perturb: Option<f64>,
) -> Result<(), CliError> {
    let p = match partition {
        Some(text) => parse_partition(spec, text)?,
        None => Partition::singletons(spec.n_agents()),
    };

    let reports = match perturb {
        None => validate_we(spec, &p, horizon, cli.seed)?,
        Some(pct) => {
            // feed the first block a deliberately wrong rate: coverage for
            // that block should break if the simulator is doing its job
            let we = wardrop_split(spec, &p)?;
            let mut reports = validate_we(spec, &p, horizon, cli.seed)?;
            let block = p.blocks()[0];
            let wrong = we.rates()[0] * (1.0 + pct / 100.0);
            let est = coalition_core::mc::simulate_loss(
                spec.coalition_servers(block),
                wrong,
                spec.service_rate(),
                horizon,
                cli.seed,
            )?;
            reports[0].analytic_rate = wrong;
            reports[0].covered =
                (est.blocked_fraction - reports[0].target_blocking).abs() <= est.half_width_95;
            reports[0].estimate = est;
            reports
        }
    };

    let mut out = String::new();
    out.push_str("block,servers,rate,target_blocking,estimate,half_width,arrivals,covered\n");
    let mut misses = Vec::new();
    for r in &reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            block_labels(spec, r.block),
            r.servers,
            fmt_g(r.analytic_rate),
            fmt_g(r.target_blocking),
            fmt_g(r.estimate.blocked_fraction),
            fmt_g(r.estimate.half_width_95),
            r.estimate.arrivals_observed,
            r.covered
        );
        if !r.covered {
            misses.push(block_labels(spec, r.block));
        }
    }
    write_output(cli, &out)?;
    if misses.is_empty() {
        Ok(())
    } else {
        Err(CliError::McFailure(format!(
            "blocks [{}] fell outside their 95% intervals",
            misses.join(" ")
        )))
    }
}
