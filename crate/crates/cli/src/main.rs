use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use shiftlab::env::default_tv_resolution;
use shiftlab::harness::{experiment_dir, load_contexts};
use shiftlab::seed::rng_from;
use shiftlab::shifts::{IntervalFamily, Interpretation, LevelMode};
use shiftlab::{compute_shifts, run_experiment, DetectorConfig, Environment, Error, ExperimentConfig, ExperimentSummary, GapTable};

#[derive(Parser)]
#[command(name = "shiftlab", about = "Non-stationary Lipschitz contextual bandit experiments")]
struct Cli {
    /// Worker threads for parallel runs (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Override the configured output directory.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Override the configured base seed.
    #[arg(long, global = true, value_name = "S")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config.
    Run { config: PathBuf },
    /// Run a horizon sweep and report regret-exponent fits.
    Sweep { config: PathBuf },
    /// Detect experienced significant shifts for a fixed context sequence.
    DetectShifts {
        env_file: PathBuf,
        /// Contexts as a JSON array of arrays or a header-less CSV.
        contexts_file: PathBuf,
        #[arg(long, value_enum, default_value_t = LevelArg::Exact)]
        level_mode: LevelArg,
        #[arg(long, value_enum, default_value_t = FamilyArg::All)]
        family: FamilyArg,
        #[arg(long, value_enum, default_value_t = InterpretationArg::CurrentContext)]
        interpretation: InterpretationArg,
    },
    /// Check an environment file and print its shift and variation measures.
    ValidateEnv { env_file: PathBuf },
    /// Print the version.
    Version,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Exact,
    Critical,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    All,
    Dyadic,
}

#[derive(Clone, Copy, ValueEnum)]
enum InterpretationArg {
    CurrentContext,
    AnyContext,
}

fn load_config(path: &Path, cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(dir) = &cli.output {
        config.output_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        config.base_seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn print_summary(config: &ExperimentConfig, summary: &ExperimentSummary) {
    println!("{:<16} {:>8} {:>5} {:>12} {:>10} {:>9} {:>9} {:>7}", "algo", "T", "runs", "mean_regret", "sd", "episodes", "replays", "L~");
    for a in &summary.aggregates {
        println!(
            "{:<16} {:>8} {:>5} {:>12.2} {:>10.2} {:>9.2} {:>9.2} {:>7.2}",
            a.algo, a.horizon, a.runs, a.mean_regret, a.std_regret, a.mean_episodes, a.mean_replays, a.mean_shifts_current_context
        );
    }
    for f in &summary.fits {
        println!("fit {}: slope {:.4} intercept {:.4} R^2 {:.4}", f.algo, f.fit.slope, f.fit.intercept, f.fit.r_squared);
    }
    println!("wrote {}", experiment_dir(config).display());
}

fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Run { config } => {
            let config = load_config(config, cli)?;
            let summary = run_experiment(&config)?;
            print_summary(&config, &summary);
        }
        Command::Sweep { config } => {
            let config = load_config(config, cli)?;
            match &config.sweep {
                Some(s) if s.len() >= 3 => {}
                _ => return Err(Error::InvalidConfig("sweep needs at least three horizons in `sweep`".into())),
            }
            let summary = run_experiment(&config)?;
            print_summary(&config, &summary);
        }
        Command::DetectShifts { env_file, contexts_file, level_mode, family, interpretation } => {
            let env = Environment::load(env_file)?;
            let contexts = load_contexts(contexts_file)?;
            let gaps = GapTable::from_env(&env, &contexts)?;
            let detector = DetectorConfig {
                level_mode: match level_mode {
                    LevelArg::Exact => LevelMode::Exact,
                    LevelArg::Critical => LevelMode::Critical,
                },
                family: match family {
                    FamilyArg::All => IntervalFamily::All,
                    FamilyArg::Dyadic => IntervalFamily::Dyadic,
                },
                interpretation: match interpretation {
                    InterpretationArg::CurrentContext => Interpretation::CurrentContext,
                    InterpretationArg::AnyContext => Interpretation::AnyContext,
                },
            };
            let json = compute_shifts(&gaps, &contexts, env.dim, detector)?.to_json()?;
            if let Some(dir) = &cli.output {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("shifts.json");
                std::fs::write(&path, format!("{json}\n")).map_err(|e| Error::io(&path, e))?;
            }
            println!("{json}");
        }
        Command::ValidateEnv { env_file } => {
            let env = Environment::load(env_file)?;
            let resolution = default_tv_resolution(env.dim);
            let lipschitz = env.lipschitz_check(10_000, &mut rng_from(cli.seed.unwrap_or(0)));
            println!("valid: T={} K={} d={} phases={}", env.horizon, env.arms, env.dim, env.phases.len());
            println!("global shifts L: {}", env.global_shift_count());
            println!("tv upper bound (grid {resolution}): {:.6}", env.tv_upper_bound(resolution)?);
            println!("sampled Lipschitz ratio: {lipschitz:.6}");
            if lipschitz > 1.0 + 1e-9 {
                return Err(Error::InvalidEnvironment(format!("Lipschitz ratio {lipschitz} exceeds 1")));
            }
        }
        Command::Version => println!("shiftlab {}", env!("CARGO_PKG_VERSION")),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
