//! `coevo` — simulate, optimize, and analyze co-evolving machine collectives.
//!
//! Every subcommand writes a self-contained run directory (config snapshot,
//! JSONL log, CSV projection, detector report) and exits 0 on success, 2 on
//! invalid configuration, 3 on a runtime contract violation. The env var
//! `COEVO_THREADS` caps worker parallelism.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use coevo_core::harness::{
    analyze_to_dir, apply_overrides, configure_thread_cap, load_config, optimize_to_dir,
    run_scenario, run_to_dir, HarnessError, OptimizeOutcome, RunConfig,
};

#[derive(Parser)]
#[command(name = "coevo", version, about = "Co-evolving machine-collective simulator")]
struct Cli {
    /// Suppress success chatter; errors still go to stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a config — or a shipped scenario — into a run directory.
    Run {
        /// Config file; exactly one of --config / --scenario.
        #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
        config: Option<PathBuf>,
        /// Shipped scenario preset to run instead of a config file.
        #[arg(long)]
        scenario: Option<String>,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory (default: the config's `out`, then ./coevo-out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override ensemble replicate counts.
        #[arg(long)]
        replicates: Option<u64>,
    },
    /// Search Society policies per the config's optimize section.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<u64>,
    },
    /// Run a shipped scenario preset.
    Experiment {
        /// One of: malthus, runaway, phase, kelly, adversarial.
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<u64>,
    },
    /// Check a config against the invariant suite without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recompute detectors and the summary from a run directory's log.
    Analyze {
        /// A directory previously written by run/experiment.
        dir: PathBuf,
    },
}

fn out_dir(flag: Option<PathBuf>, config: &RunConfig, fallback: &str) -> PathBuf {
    flag.or_else(|| config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn run_preset(
    scenario: &str,
    seed: Option<u64>,
    replicates: Option<u64>,
    out: Option<PathBuf>,
    quiet: bool,
) -> Result<(), HarnessError> {
    let dir = out.unwrap_or_else(|| PathBuf::from(format!("{scenario}-out")));
    run_scenario(scenario, seed, replicates, &dir)?;
    if !quiet {
        println!("{scenario} -> {}", dir.display());
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), HarnessError> {
    match &cli.command {
        Command::Run { config: None, scenario: Some(name), seed, out, replicates } => {
            run_preset(name, *seed, *replicates, out.clone(), cli.quiet)
        }
        Command::Run { config: Some(config), seed, out, replicates, .. } => {
            let mut cfg = load_config(config)?;
            apply_overrides(&mut cfg, *seed, *replicates);
            let dir = out_dir(out.clone(), &cfg, "coevo-out");
            let artifacts = run_to_dir(&cfg, &dir)?;
            if !cli.quiet {
                match &artifacts.log.halt {
                    None => println!("{} rows -> {}", artifacts.log.rows.len(), dir.display()),
                    Some(h) => println!(
                        "{} rows (truncated at {}: {}) -> {}",
                        artifacts.log.rows.len(),
                        h.iteration,
                        h.reason,
                        dir.display()
                    ),
                }
            }
            Ok(())
        }
        Command::Run { config: None, scenario: None, .. } => {
            unreachable!("clap requires one of --config / --scenario")
        }
        Command::Optimize { config, seed, out, replicates } => {
            let mut cfg = load_config(config)?;
            apply_overrides(&mut cfg, *seed, *replicates);
            let dir = out_dir(out.clone(), &cfg, "coevo-out");
            let outcome = optimize_to_dir(&cfg, &dir)?;
            if !cli.quiet {
                match &outcome {
                    OptimizeOutcome::Inner { report, .. } => {
                        println!("best score {} -> {}", report.best_score, dir.display())
                    }
                    OptimizeOutcome::Random { rounds } => {
                        println!("{} rounds -> {}", rounds.len(), dir.display())
                    }
                    OptimizeOutcome::Adversarial { report } => {
                        println!("{} rounds -> {}", report.rounds.len(), dir.display())
                    }
                }
            }
            Ok(())
        }
        Command::Experiment { scenario, seed, out, replicates } => {
            run_preset(scenario, *seed, *replicates, out.clone(), cli.quiet)
        }
        Command::Validate { config } => {
            load_config(config)?;
            if !cli.quiet {
                println!("ok: {}", config.display());
            }
            Ok(())
        }
        Command::Analyze { dir } => {
            let report = analyze_to_dir(dir)?;
            if !cli.quiet {
                let flag = |o: &Option<coevo_core::harness::DetectorOutcome>| {
                    o.as_ref()
                        .map(|d| match d.first_flag {
                            Some(t) => format!("first flag at {t}"),
                            None => "no flags".into(),
                        })
                        .unwrap_or_else(|| "not configured".into())
                };
                println!(
                    "{} iterations; escape: {}; runaway: {}",
                    report.population.len(),
                    flag(&report.escape),
                    flag(&report.runaway)
                );
            }
            Ok(())
        }
    }
}

fn thread_cap_from_env() -> Result<(), HarnessError> {
    match std::env::var("COEVO_THREADS") {
        Ok(v) => {
            let n: usize = v
                .parse()
                .map_err(|_| HarnessError::Config(format!("COEVO_THREADS={v} is not a number")))?;
            if n == 0 {
                return Err(HarnessError::Config("COEVO_THREADS must be at least 1".into()));
            }
            configure_thread_cap(n)
        }
        Err(_) => Ok(()),
    }
}

fn main() {
    let cli = Cli::parse();
    let result = thread_cap_from_env().and_then(|()| dispatch(&cli));
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
