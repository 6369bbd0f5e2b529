use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pathmfc_cli::{run, CliError, Command, ExperimentConfig};

/// Particle simulation and numerical checks for controlled path-dependent
/// McKean-Vlasov equations.
#[derive(Parser)]
#[command(name = "pathmfc", version = pathmfc_cli::VERSION)]
struct Args {
    command: Command,
    /// TOML config; the shipped default is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for report.json and CSV files.
    #[arg(long, default_value = "pathmfc-out")]
    out: PathBuf,
    /// Overrides the root seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: &Args) -> Result<bool, CliError> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let mut cfg = ExperimentConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let report = run(args.command, &cfg, &args.out)?;
    for c in &report.checks {
        println!("{:<20} {}", c.name, if c.pass { "pass" } else { "FAIL" });
    }
    println!(
        "{}: {}/{} checks passed in {:.1} s -> {}",
        report.command,
        report.passed,
        report.checks.len(),
        report.wall_time_seconds,
        args.out.join("report.json").display()
    );
    Ok(report.pass)
}
