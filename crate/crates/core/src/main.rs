use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use linbp::experiment::config::{LoadOptions, MethodKind};
use linbp::experiment::output::{to_json, write_csv, write_window_csv};
use linbp::experiment::run::{far_band, far_violations};
use linbp::experiment::{self, load_config_with, ExperimentConfig, ExperimentError};

#[derive(Parser)]
#[command(name = "linbp", version, about = "Cooperative spectrum sensing with classical and linear belief propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated slots (PU states, occupancy, energies) as CSV.
    Simulate(Common),
    /// Empirical ROC points of every configured method.
    Roc(Common),
    /// False-alarm rate against the constraint for τ₀-thresholded BP and calibrated linear BP.
    FarSweep(Common),
    /// Train blind and oracle linear BP weights and report them as JSON.
    Learn(Common),
    /// Calibrated blind linear BP thresholds as CSV.
    Calibrate(Common),
    /// Contraction certificates of all trained weights as JSON.
    ValidateConvergence(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict the ROC to one method.
    #[arg(long, value_parser = parse_method)]
    method: Option<MethodKind>,
    /// Reject unknown config keys; in `far-sweep`, fail when a calibrated rate leaves its band.
    #[arg(long)]
    strict: bool,
}

fn parse_method(name: &str) -> Result<MethodKind, String> {
    serde_json::from_value(serde_json::Value::String(name.to_string())).map_err(|_| {
        format!("unknown method `{name}` (expected local, bp, utrw, linear_bp_oracle or linear_bp_blind)")
    })
}

enum Failure {
    Config(String),
    Numerical(String),
    Assertion(String),
    Io(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load(args: &Common) -> Result<ExperimentConfig, Failure> {
    let options = LoadOptions { strict: args.strict, seed: args.seed, slots: args.slots };
    let loaded = load_config_with(&args.config, &options).map_err(|e| Failure::Config(e.to_string()))?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    Ok(loaded.config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(args) => {
            let config = load(&args)?;
            let window = experiment::simulate(&config)?;
            let mut out = sink(args.out.as_deref().or(config.output.simulate_csv.as_deref()))?;
            write_window_csv(&window, &mut out)?;
            out.flush()?;
        }
        Command::Roc(args) => {
            let mut config = load(&args)?;
            if let Some(method) = args.method {
                config.methods.list = vec![method];
            }
            let rows = experiment::run_roc(&config)?;
            let mut out = sink(args.out.as_deref().or(config.output.roc_csv.as_deref()))?;
            write_csv(&rows, &mut out)?;
            out.flush()?;
        }
        Command::FarSweep(args) => {
            let config = load(&args)?;
            let rows = experiment::run_far_sweep(&config)?;
            let mut out = sink(args.out.as_deref().or(config.output.far_csv.as_deref()))?;
            write_csv(&rows, &mut out)?;
            out.flush()?;
            let violations = far_violations(&rows);
            for v in &violations {
                eprintln!(
                    "calibrated false-alarm rate {:.4} at node {} exceeds {:.4} (alpha {})",
                    v.far,
                    v.node,
                    far_band(v.alpha, v.slots),
                    v.alpha
                );
            }
            if args.strict && !violations.is_empty() {
                return Err(Failure::Assertion(format!("{} calibrated rows outside their band", violations.len())));
            }
        }
        Command::Learn(args) => {
            let config = load(&args)?;
            let report = experiment::learn(&config)?;
            let mut out = sink(args.out.as_deref().or(config.output.report_json.as_deref()))?;
            out.write_all(to_json(&report)?.as_bytes())?;
            out.flush()?;
        }
        Command::Calibrate(args) => {
            let config = load(&args)?;
            let rows = experiment::calibrate(&config)?;
            let mut out = sink(args.out.as_deref())?;
            write_csv(&rows, &mut out)?;
            out.flush()?;
        }
        Command::ValidateConvergence(args) => {
            let config = load(&args)?;
            let report = experiment::validate_convergence(&config)?;
            let mut out = sink(args.out.as_deref().or(config.output.report_json.as_deref()))?;
            out.write_all(to_json(&report)?.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Assertion(m)) => {
            eprintln!("assertion failed: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Io(m)) => {
            eprintln!("i/o error: {m}");
            ExitCode::from(1)
        }
    }
}
