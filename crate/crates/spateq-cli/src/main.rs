use clap::Parser;
use spateq_cli::config::{Overrides, RunConfig};
use spateq_cli::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Equilibrium enumeration for spatial models with social interactions.
#[derive(Parser, Debug)]
#[command(name = "spateq", version)]
struct Args {
    /// enumerate, elasticity, maclaurin, nested, sweep, bifurcate or oracle
    mode: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores)
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    trace: bool,
    /// Maximum number of paths
    #[arg(long)]
    budget: Option<u128>,
    /// total-degree or amenity-homotopy
    #[arg(long)]
    solver: Option<String>,
    /// Comma-separated finite elasticities
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    quiet: bool,
}

fn execute(args: Args) -> Result<String, CliError> {
    #[cfg(feature = "parallel")]
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = args.threads;
    let text = match &args.config {
        Some(p) => {
            std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?
        }
        None => String::new(),
    };
    let ov = Overrides {
        mode: args.mode,
        out: args.out,
        seed: args.seed,
        trace: args.trace,
        budget: args.budget,
        solver: args.solver,
        eta: args.eta,
        quiet: args.quiet,
    };
    let cfg = RunConfig::from_text(&text, &ov)?;
    let outcome = spateq_cli::run(&cfg)?;
    Ok(format!(
        "{}: {} -> {}",
        cfg.mode.name(),
        outcome.summary,
        cfg.out.display()
    ))
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let quiet = args.quiet;
    match execute(args) {
        Ok(msg) => {
            if !quiet {
                eprintln!("{msg}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("spateq: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
