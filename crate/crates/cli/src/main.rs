use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mptp::config::RunConfig;
use mptp::potential::PluginRegistry;
use mptp::run::{cmd_solve, cmd_sweep, RunManifest};
use mptp::selftest::{run_selftest, SelftestConfig};
use mptp::Error;

/// Most probable transition paths: solve, sweep in σ, or run the oracle suite.
#[derive(Parser)]
#[command(name = "mptp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve at a single σ and write the path with its indices.
    Solve(RunArgs),
    /// Continue a family over the σ grid and analyse bifurcations.
    Sweep(RunArgs),
    /// Run the built-in oracle checks.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Take tolerances, solver options and seed from this run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn init_threads(threads: Option<usize>) -> Result<(), Error> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::config("--threads", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config("--threads", e.to_string()))?;
    }
    Ok(())
}

fn load(args: &RunArgs) -> Result<RunConfig, Error> {
    init_threads(args.threads)?;
    let mut cfg = RunConfig::load_with_env(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn summarize(m: &RunManifest) {
    println!(
        "{}: wrote {} files to {}",
        m.command,
        m.files.len() + 1,
        m.config.output.display()
    );
    for d in &m.diagnostics {
        println!("  note: {d}");
    }
    for w in &m.warnings {
        println!("  warning: {w}");
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    let registry = PluginRegistry::default();
    match cli.command {
        Command::Solve(a) => {
            summarize(&cmd_solve(&load(&a)?, &registry)?);
            Ok(true)
        }
        Command::Sweep(a) => {
            summarize(&cmd_sweep(&load(&a)?, &registry)?);
            Ok(true)
        }
        Command::Selftest(a) => {
            init_threads(a.threads)?;
            let cfg = match &a.config {
                Some(p) => {
                    let rc = RunConfig::load_with_env(p)?;
                    SelftestConfig {
                        tolerances: rc.tolerances,
                        solver: rc.solver,
                        seed: rc.seed,
                    }
                }
                None => SelftestConfig::from_env()?,
            };
            let report = run_selftest(&cfg);
            print!("{}", report.table());
            Ok(report.all_passed())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
