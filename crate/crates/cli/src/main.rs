use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use svgd_explore_cli::aggregate::aggregate;
use svgd_explore_cli::config::{Experiment, Method, RunConfig};
use svgd_explore_cli::run::run_experiment;
use svgd_explore_cli::sanity::{gradcheck, svgd_sanity};
use svgd_explore_cli::{CliError, OUT_ROOT_ENV};

/// Exploration experiments driven by an implicit posterior over dynamics
/// models.
#[derive(Parser)]
#[command(name = "svgd-explore", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed or comma-separated seed list, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Output root, overriding the config (the SVGD_EXPLORE_OUT environment
    /// variable overrides both).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Method, overriding the config.
    #[arg(long)]
    method: Option<Method>,
}

#[derive(Subcommand)]
enum Command {
    /// Stochastic chain exploration run.
    Chain(RunArgs),
    /// Continuous U-maze exploration run.
    Maze(RunArgs),
    /// Validate the Stein updates against analytic posteriors.
    SvgdSanity(RunArgs),
    /// Finite-difference checks over the gradient chain.
    Gradcheck(RunArgs),
    /// Aggregate run directories into per-episode mean/std curves.
    Aggregate {
        /// Run directories produced by chain/maze (one per method).
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// Output directory for summary.csv and coverage.svg.
        #[arg(long, default_value = "aggregate")]
        out: PathBuf,
    },
}

fn load_config(args: &RunArgs, experiment: Experiment) -> Result<(RunConfig, Option<Vec<u8>>), CliError> {
    let (mut config, snapshot) = match &args.config {
        Some(path) => {
            let bytes = std::fs::read(path)
                .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
            let text = String::from_utf8(bytes.clone())
                .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
            (RunConfig::from_toml(&text)?, Some(bytes))
        }
        None => (RunConfig::default(), None),
    };
    config.experiment = experiment;
    if let Some(method) = args.method {
        config.method = method;
    }
    if let Some(seeds) = &args.seed {
        config.seeds = seeds.clone();
    }
    if let Some(out) = &args.out {
        config.output_dir = out.to_string_lossy().into_owned();
    }
    config.validate()?;
    Ok((config, snapshot))
}

fn out_root(config: &RunConfig) -> PathBuf {
    match std::env::var(OUT_ROOT_ENV) {
        Ok(root) if !root.is_empty() => PathBuf::from(root),
        _ => PathBuf::from(&config.output_dir),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Chain(args) => {
            let (config, snapshot) = load_config(&args, Experiment::Chain)?;
            let outcome = run_experiment(&config, &out_root(&config), snapshot.as_deref())?;
            for m in &outcome.per_seed {
                println!(
                    "seed {}: final coverage {:.3}, episodes to full coverage {}, {:.1}s",
                    m.seed, m.final_coverage, m.episodes_to_full_coverage, m.wall_time_secs
                );
                if let Some(err) = &m.error {
                    return Err(CliError::Runtime(format!("seed {} fault: {err}", m.seed)));
                }
            }
            println!("run directory: {}", outcome.run_dir.display());
            Ok(())
        }
        Command::Maze(args) => {
            let (config, snapshot) = load_config(&args, Experiment::Maze)?;
            let outcome = run_experiment(&config, &out_root(&config), snapshot.as_deref())?;
            for m in &outcome.per_seed {
                println!(
                    "seed {}: final coverage {:.3} after {} steps, {:.1}s",
                    m.seed,
                    m.final_coverage,
                    m.rows.len(),
                    m.wall_time_secs
                );
                if let Some(err) = &m.error {
                    return Err(CliError::Runtime(format!("seed {} fault: {err}", m.seed)));
                }
            }
            println!("run directory: {}", outcome.run_dir.display());
            Ok(())
        }
        Command::SvgdSanity(args) => {
            let (config, _) = load_config(&args, Experiment::SvgdSanity)?;
            let report = svgd_sanity(&config.sanity);
            print!("{}", report.render());
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::Runtime("svgd sanity checks failed".into()))
            }
        }
        Command::Gradcheck(args) => {
            let (_config, _) = load_config(&args, Experiment::Gradcheck)?;
            let report = gradcheck(20);
            print!("{}", report.render());
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::Runtime("gradient checks failed".into()))
            }
        }
        Command::Aggregate { run_dirs, out } => {
            let aggregates = aggregate(&run_dirs, &out)?;
            for agg in &aggregates {
                println!("{}: {} episodes over {} seeds", agg.label, agg.rows.len(), agg.seeds);
            }
            println!("wrote {}", out.join("summary.csv").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
