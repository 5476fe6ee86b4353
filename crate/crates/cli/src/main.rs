use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use congestion_core::poa::SamplingPlan;
use congestion_core::runner::{
    run_decompose, run_reproduce, run_sample, run_solve, run_sweep, RunError, RunReport, SampleConfig, EXIT_INPUT,
};
use congestion_core::SolverConfig;

#[derive(Parser)]
#[command(name = "congestion", version, about = "Equilibria and prices of anarchy of polynomial congestion games")]
struct Cli {
    #[command(flatten)]
    solver: SolverArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SolverArgs {
    /// Relative solver tolerance.
    #[arg(long, global = true, env = "CONGESTION_TOLERANCE", default_value_t = 1e-9)]
    tolerance: f64,
    /// Largest number of joint states an enumeration may visit.
    #[arg(long, global = true, env = "CONGESTION_BUDGET", default_value_t = 10_000_000)]
    budget: u64,
    #[arg(long, global = true, default_value_t = 100_000)]
    max_iterations: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one game and report its PoAs and bounds.
    Solve {
        #[arg(long)]
        game: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// PoAs and bounds over a demand family.
    Sweep {
        #[arg(long)]
        family: PathBuf,
        /// Comma-separated family indices, strictly increasing.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample the random PoA of a mixed profile.
    Sample {
        #[arg(long)]
        game: PathBuf,
        /// Mixed profile document; defaults to the solved mixed NE.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 1.0 / 3.0)]
        delta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the worked examples.
    Reproduce {
        /// Directory with the example documents; defaults to the bundled copies.
        #[arg(long)]
        assets: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Class structure, limit games and predicted costs of a demand family.
    Decompose {
        #[arg(long)]
        family: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn print_report(report: &RunReport) {
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> Result<i32, RunError> {
    let mut config = SolverConfig {
        tolerance: cli.solver.tolerance,
        enumeration_budget: cli.solver.budget,
        max_iterations: cli.solver.max_iterations,
        ..SolverConfig::default()
    };
    let report = match cli.command {
        Command::Solve { game, out, seed } => {
            config.rng_seed = seed;
            run_solve(&game, &out, &config)?
        }
        Command::Sweep { family, grid, out, seed } => {
            config.rng_seed = seed;
            run_sweep(&family, &grid, &out, &config)?
        }
        Command::Sample { game, profile, n, seed, workers, delta, out } => {
            config.rng_seed = seed;
            let sample = SampleConfig { game, profile, plan: SamplingPlan { samples: n, seed, workers }, out, delta };
            let (report, dist) = run_sample(&sample, &config)?;
            println!("samples {} mean {} std {}", dist.sample_count, dist.sample_mean, dist.sample_std);
            if let Some(mean) = dist.exact_mean() {
                println!("exact mean {mean}");
            }
            report
        }
        Command::Reproduce { assets, out } => run_reproduce(assets.as_deref(), out.as_deref(), &config)?,
        Command::Decompose { family, grid, out, seed } => {
            config.rng_seed = seed;
            run_decompose(&family, &grid, &out, &config)?
        }
    };
    print_report(&report);
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
