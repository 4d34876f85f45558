use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use quasilab::cli::{
    cmd_check, cmd_comparison_suite, cmd_counterexample, cmd_diagnose_space, cmd_estimate_k,
    cmd_mollify_report, cmd_solve, cmd_staircase, RunContext,
};
use quasilab::report::{config_digest, Report};

/// Numerical laboratory for parabolic quasiminimizers on weighted graphs.
#[derive(Parser)]
#[command(name = "quasilab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Override the seed recorded in the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the report, plot tables, and witnesses
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the doubling constant and Poincaré constant of a space
    DiagnoseSpace(Common),
    /// Non-uniqueness experiment: two quasiminimizers with identical data
    Counterexample(Common),
    /// Comparison principle, uniqueness, and initial-residual decay
    ComparisonSuite(Common),
    /// Lower-bound search for the minimal quasiminimizer constant K
    EstimateK(Common),
    /// Check the quasiminimizer inequality over a seeded test family
    Check(Common),
    /// Implicit variational p-parabolic solve
    Solve(Common),
    /// Time-regularity convergence rates under shifts and mollification
    MollifyReport(Common),
    /// Minimal-K sweep of the harmonic staircase over domain lengths
    Staircase(Common),
}

fn run(command: &Command) -> quasilab::Result<Report> {
    let common = match command {
        Command::DiagnoseSpace(c)
        | Command::Counterexample(c)
        | Command::ComparisonSuite(c)
        | Command::EstimateK(c)
        | Command::Check(c)
        | Command::Solve(c)
        | Command::MollifyReport(c)
        | Command::Staircase(c) => c,
    };
    let bytes = fs::read(&common.config)?;
    fs::create_dir_all(&common.out)?;
    let mut ctx = RunContext::new(config_digest(&bytes), &common.out);
    ctx.seed_override = common.seed;

    let report = match command {
        Command::DiagnoseSpace(_) => cmd_diagnose_space(&serde_json::from_slice(&bytes)?, &ctx)?,
        Command::Counterexample(_) => cmd_counterexample(&serde_json::from_slice(&bytes)?, &ctx)?,
        Command::ComparisonSuite(_) => {
            cmd_comparison_suite(&serde_json::from_slice(&bytes)?, &ctx)?
        }
        Command::EstimateK(_) => cmd_estimate_k(&serde_json::from_slice(&bytes)?, &ctx)?,
        Command::Check(_) => cmd_check(&serde_json::from_slice(&bytes)?, &ctx)?,
        Command::Solve(_) => cmd_solve(&serde_json::from_slice(&bytes)?, &ctx)?,
        Command::MollifyReport(_) => cmd_mollify_report(&serde_json::from_slice(&bytes)?, &ctx)?,
        Command::Staircase(_) => cmd_staircase(&serde_json::from_slice(&bytes)?, &ctx)?,
    };
    report.save(&common.out)?;
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(report) => {
            println!("{}", report.to_json());
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
