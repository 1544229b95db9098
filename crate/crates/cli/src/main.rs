use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vmv_spread_cli::{parse_scenario, run, CliError, Command, RunOptions};

/// Environment variable capping the worker thread count.
const THREADS_ENV: &str = "VMV_SPREAD_THREADS";

#[derive(Parser)]
#[command(name = "vmv-spread", version, about = "Spread option pricing and hedging under Volterra spot models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Scenario file.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Output CSV; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Simulation paths, overriding the scenario.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Random seed, overriding the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write simulated paths to this CSV (`simulate` only).
    #[arg(long, global = true, value_name = "PATH")]
    dump_paths: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Fourier price at the snapshot.
    Price,
    /// Forward curve decomposition per leg.
    Forward,
    /// Quadratic hedge positions.
    Hedge,
    /// Monte Carlo estimates.
    Simulate,
    /// Cross-check analytic and simulated values.
    Validate,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn main_inner(cli: Cli) -> Result<i32, CliError> {
    init_threads()?;
    let path = cli.scenario.ok_or_else(|| CliError::Usage("--scenario is required".into()))?;
    let scenario = parse_scenario(&path)?;
    let command = match cli.command {
        Cmd::Price => Command::Price,
        Cmd::Forward => Command::Forward,
        Cmd::Hedge => Command::Hedge,
        Cmd::Simulate => Command::Simulate,
        Cmd::Validate => Command::Validate,
    };
    let opts = RunOptions {
        paths: cli.paths,
        seed: cli.seed,
        dump_paths: cli.dump_paths,
    };
    let report = run(command, &scenario, &opts)?;
    match &cli.out {
        Some(p) => std::fs::write(p, &report.csv).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        None => std::io::stdout()
            .write_all(report.csv.as_bytes())
            .map_err(|e| CliError::Io(e.to_string()))?,
    }
    if report.failures > 0 {
        let e = CliError::Validation(report.failures);
        eprintln!("error: {e}");
        return Ok(e.exit_code());
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match main_inner(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
