//! `evcharge`: run experiment matrices, render reports and cross-check the
//! event-driven engine against the fixed-step reference.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use evcharge::export::{self, ExportError};
use evcharge::oracle::{self, OracleError, StepConfig};
use evcharge::protocol::SimError;
use evcharge::report::{emit_report, OverlayInputs, ReportError};
use evcharge::runner::{builtin_matrix, run_matrix, ExperimentMatrix, RunSettings, RunnerError};
use evcharge::scenario::{ConfigError, RunSeed, ScenarioConfig, Strategy, WS_PER_KWH};
use evcharge::signals::{load_series, SignalError};

#[derive(Parser)]
#[command(name = "evcharge", version, about = "Discrete-event simulator of a power-capped EV charging facility")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment matrix and write CSV results.
    Run(RunArgs),
    /// Render SVG figures from a results directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Price signal for the overlay figure (defaults to the copy in --in).
        #[arg(long)]
        prices: Option<PathBuf>,
        /// PV signal for the overlay figure (defaults to the copy in --in).
        #[arg(long)]
        pv: Option<PathBuf>,
    },
    /// Compare the event-driven engine with the fixed-step reference.
    Validate(ValidateArgs),
    /// Print the effective scenario configuration as TOML.
    ShowConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// `builtin` or a TOML matrix file.
    #[arg(long, default_value = "builtin")]
    matrix: String,
    /// TOML file overriding scenario fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed (overrides the matrix value).
    #[arg(long)]
    seed: Option<u64>,
    /// Replications per experiment (overrides the matrix value).
    #[arg(long)]
    reps: Option<u32>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Price signal CSV, `time_s,value` per kWh.
    #[arg(long)]
    prices: Option<PathBuf>,
    /// PV signal CSV, `time_s,value` in watts. Only used by `report`.
    #[arg(long)]
    pv: Option<PathBuf>,
    /// Reference energy for time-to-reach, kWh.
    #[arg(long = "e-star")]
    e_star: Option<f64>,
    #[arg(long = "price-interval")]
    price_interval: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Also write per-run ES trace, grant log and event log.
    #[arg(long)]
    traces: bool,
}

#[derive(clap::Args)]
struct ValidateArgs {
    /// Fixed step, seconds.
    #[arg(long)]
    dt: f64,
    #[arg(long)]
    evs: u32,
    #[arg(long)]
    fcc: Option<u32>,
    #[arg(long)]
    scc: Option<u32>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "e-star")]
    e_star: Option<f64>,
    /// Fail on durations that are not whole steps instead of rounding up.
    #[arg(long)]
    exact: bool,
    /// Directory for comparison.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit codes by error category.
mod code {
    pub const OTHER: u8 = 1;
    pub const CONFIG: u8 = 3;
    pub const INPUT: u8 = 4;
    pub const SIMULATION: u8 = 5;
    pub const OUTPUT: u8 = 6;
    pub const OUT_OF_BOUNDS: u8 = 7;
}

#[derive(Debug)]
struct OutOfBounds;

impl std::fmt::Display for OutOfBounds {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("fixed-step reference deviates beyond its error bound")
    }
}

impl std::error::Error for OutOfBounds {}

fn categorize(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if cause.is::<OutOfBounds>() {
            return ("validation", code::OUT_OF_BOUNDS);
        }
        if cause.is::<ConfigError>() {
            return ("config", code::CONFIG);
        }
        if cause.is::<SignalError>() || cause.is::<std::io::Error>() {
            return ("input", code::INPUT);
        }
        if cause.is::<SimError>() {
            return ("simulation", code::SIMULATION);
        }
        if cause.is::<ExportError>() {
            return ("output", code::OUTPUT);
        }
        if let Some(e) = cause.downcast_ref::<RunnerError>() {
            return match e {
                RunnerError::Config(_) => ("config", code::CONFIG),
                RunnerError::Run { .. } => ("simulation", code::SIMULATION),
                RunnerError::Metrics(_) => ("simulation", code::SIMULATION),
                RunnerError::Io { .. } => ("input", code::INPUT),
            };
        }
        if let Some(e) = cause.downcast_ref::<ReportError>() {
            return match e {
                ReportError::Export(ExportError::Io { .. }) | ReportError::Export(ExportError::Format { .. }) => {
                    ("input", code::INPUT)
                }
                ReportError::Signal(_) | ReportError::MissingOverlayInput(_) => ("input", code::INPUT),
                _ => ("output", code::OUTPUT),
            };
        }
        if let Some(e) = cause.downcast_ref::<OracleError>() {
            return match e {
                OracleError::Config(_) | OracleError::BadStep(_) | OracleError::Misaligned { .. } => {
                    ("config", code::CONFIG)
                }
                OracleError::Io { .. } => ("output", code::OUTPUT),
                _ => ("simulation", code::SIMULATION),
            };
        }
    }
    ("error", code::OTHER)
}

/// The error chain joined by `: `, skipping causes already quoted by their
/// wrapper.
fn render(err: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !text.ends_with(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        None => Ok(ScenarioConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ScenarioConfig::from_toml_str(&text).with_context(|| format!("in {}", p.display()))
        }
    }
}

fn e_star_ws(kwh: Option<f64>) -> Result<f64> {
    match kwh {
        None => Ok(evcharge::metrics::DEFAULT_E_STAR_WS),
        Some(v) if v.is_finite() && v > 0.0 => Ok(v * WS_PER_KWH),
        Some(v) => Err(ConfigError::Invalid(format!("--e-star must be positive, got {v}")).into()),
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut matrix = if args.matrix == "builtin" {
        builtin_matrix()
    } else {
        ExperimentMatrix::load(Path::new(&args.matrix))?
    };
    if let Some(seed) = args.seed {
        matrix.root_seed = seed;
    }
    if let Some(reps) = args.reps {
        matrix.replications = reps;
    }
    matrix.validate()?;

    let mut base = load_config(args.config.as_deref())?;
    if let Some(p) = args.price_interval {
        base.price_interval_s = p;
    }
    if let Some(h) = args.horizon {
        base.horizon_s = h;
    }
    base.validate()?;

    let mut settings = RunSettings { base, e_star_ws: e_star_ws(args.e_star)?, keep_outputs: args.traces, ..Default::default() };
    let prices = args.prices.as_deref().map(load_series).transpose()?;
    let pv = args.pv.as_deref().map(load_series).transpose()?;
    if let Some(p) = &prices {
        settings.prices = p.clone();
    }

    let result = run_matrix(&matrix, &settings)?;
    export::write_results(&args.out, &matrix, &settings.base, &result)?;
    if let Some(p) = &prices {
        export::write_series(&args.out.join("prices.csv"), p)?;
    }
    if let Some(p) = &pv {
        export::write_series(&args.out.join("pv.csv"), p)?;
    }

    let mut text = format!("{} runs written to {}\n", matrix.total_runs(), args.out.display());
    text.push_str("exp  evs  fcc  scc  strategy  completed/total  median_ttr_s  idle\n");
    for e in &result.experiments {
        let mut ttr = e.summary.pooled_ttr.clone();
        ttr.sort_by(f64::total_cmp);
        let median = if ttr.is_empty() { "NA".to_string() } else { format!("{:.1}", evcharge::metrics::quantile_sorted(&ttr, 0.5)) };
        let _ = writeln!(
            text,
            "{:>3}  {:>3}  {:>3}  {:>3}  {:<8}  {:>7}/{:<7}  {:>12}  {:.4}",
            e.row.id,
            e.row.evs,
            e.row.fcc,
            e.row.scc,
            e.row.strategy.to_string(),
            e.summary.completed,
            e.summary.ev_total,
            median,
            e.summary.utilization.idle
        );
    }
    emit(&text);
    Ok(())
}

fn cmd_report(input: PathBuf, out: PathBuf, prices: Option<PathBuf>, pv: Option<PathBuf>) -> Result<()> {
    let summary = emit_report(&input, &out, &OverlayInputs { prices, pv })?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    let listing: String = summary.written.iter().map(|p| format!("{}\n", p.display())).collect();
    emit(&listing);
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    config.ev_count = args.evs;
    if let Some(n) = args.fcc {
        config.fcc_count = n;
    }
    if let Some(n) = args.scc {
        config.scc_count = n;
    }
    if let Some(s) = args.strategy {
        config.strategy = s;
    }
    config.validate()?;
    let step = if args.exact { StepConfig::exact(args.dt) } else { StepConfig::new(args.dt) };
    let seed = RunSeed::new(args.seed, 0, 0);
    let cmp = oracle::validate(&config, seed, &evcharge::runner::default_prices(), step, e_star_ws(args.e_star)?)?;
    emit(&cmp.report());
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        cmp.write_csv(&dir.join("comparison.csv"))?;
    }
    if !cmp.within_bounds() {
        bail!(OutOfBounds);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Report { input, out, prices, pv } => cmd_report(input, out, prices, pv),
        Command::Validate(args) => cmd_validate(args),
        Command::ShowConfig { config } => load_config(config.as_deref()).map(|c| emit(&c.to_toml_string())),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (category, code) = categorize(&err);
            eprintln!("error[{category}]: {}", render(&err));
            ExitCode::from(code)
        }
    }
}
