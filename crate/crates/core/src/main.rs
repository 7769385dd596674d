use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qdgd_core::harness::config::ExperimentConfig;
use qdgd_core::harness::experiment::{self, ExperimentOutput};
use qdgd_core::quantizer::QuantizerSpec;
use qdgd_core::Result;

/// Quantized decentralized gradient descent experiments.
#[derive(Parser)]
#[command(name = "qdgd", version, about)]
struct Cli {
    /// Base seed of the per-trial quantization streams (replaces the config value).
    #[arg(long, global = true, env = "QDGD_SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every case of a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write plot.svg.
        #[arg(long)]
        plot: bool,
    },
    /// Experiment 1: five stepsize strategies.
    Exp1(PaperArgs),
    /// Experiment 2: Algorithm 1 with and without the alpha-halving phase.
    Exp2(PaperArgs),
    /// Compare simulated errors with the recursion and the closed-form bounds.
    VerifyBounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also check the largest feasible stepsizes scaled by this fraction.
        #[arg(long)]
        feasible_fraction: Option<f64>,
    },
    /// Print the theoretical constants and the stepsize feasibility report.
    Info {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct PaperArgs {
    /// Grid quantizer step (type 1).
    #[arg(long, conflicts_with = "s", required_unless_present_any = ["s", "config"])]
    gamma: Option<f64>,
    /// Normalized quantizer levels (type 2).
    #[arg(long)]
    s: Option<u32>,
    /// Start from this config instead of the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Iterations T (default 50000).
    #[arg(long)]
    iterations: Option<usize>,
    /// Monte Carlo trials (default 20).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    plot: bool,
}

/// `println!` that tolerates a closed stdout (e.g. piping into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn paper_setup(args: &PaperArgs, seed: Option<u64>, default_out: &str) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = match &args.config {
        Some(path) => load(path, seed)?,
        // the quantizer is replaced below; clap guarantees --gamma or --s here
        None => experiment::paper_config(QuantizerSpec::exact(10)?, 50_000, 20),
    };
    if let Some(iterations) = args.iterations {
        config.iterations = iterations;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    let dim = config.problem.n;
    if let Some(gamma) = args.gamma {
        config.quantizer = QuantizerSpec::grid(gamma, dim)?;
    } else if let Some(s) = args.s {
        config.quantizer = QuantizerSpec::normalized(s, dim)?;
    }
    if args.config.is_none() {
        config.output_dir = PathBuf::from(default_out);
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    let out = args.out.clone().unwrap_or_else(|| config.output_dir.clone());
    Ok((config, out))
}

fn report(out: &ExperimentOutput, dir: &Path) {
    say!("wrote {} cases to {}", out.records.len(), dir.display());
    for case in &out.summary.cases {
        say!("  {:<10} final mean error {:.6e}", case.name, case.final_mean_err);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, plot } => {
            let config = load(&config, cli.seed)?;
            let dir = out.unwrap_or_else(|| config.output_dir.clone());
            let result = experiment::run_config(&config)?;
            experiment::write_output(&result, &dir, plot)?;
            report(&result, &dir);
        }
        Command::Exp1(args) => {
            let (config, dir) = paper_setup(&args, cli.seed, "out/exp1")?;
            let result = experiment::run_experiment1(&config)?;
            experiment::write_output(&result, &dir, args.plot)?;
            report(&result, &dir);
        }
        Command::Exp2(args) => {
            let (config, dir) = paper_setup(&args, cli.seed, "out/exp2")?;
            let result = experiment::run_experiment2(&config)?;
            experiment::write_output(&result, &dir, args.plot)?;
            report(&result, &dir);
        }
        Command::VerifyBounds { config, out, feasible_fraction } => {
            let config = load(&config, cli.seed)?;
            let dir = out.unwrap_or_else(|| config.output_dir.clone());
            let cases = experiment::verify_bounds(&config, feasible_fraction)?;
            experiment::write_bounds(&cases, &dir)?;
            for case in &cases {
                let status = if case.feasibility.feasible {
                    "feasible".to_string()
                } else {
                    format!("infeasible: {}", case.feasibility.violations.join("; "))
                };
                say!("  {:<10} alpha {:.4e} epsilon {:.4e} ({status})", case.name, case.constants.alpha, case.constants.epsilon);
            }
            say!("wrote bound comparison to {}", dir.display());
        }
        Command::Info { config } => {
            let config = load(&config, cli.seed)?;
            let report = experiment::info(&config)?;
            say!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(inner) = source {
                eprintln!("  caused by: {inner}");
                source = inner.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
