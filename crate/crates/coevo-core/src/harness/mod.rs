//! Run configuration, experiment execution, and persistent artifacts.
//!
//! A run directory is self-contained: the config snapshot plus the master
//! seed reproduce the log byte for byte. Logs are JSONL (one row per
//! iteration, with a final truncation marker when a run halts early) plus a
//! CSV projection for plotting; detectors are recomputed from the log alone
//! by `analyze`, never from engine internals.

pub mod detectors;
pub mod phase;
pub mod presets;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::sim::{
    run_simulation, HaltInfo, HarvestMode, InitialCondition, LogRow, SimSettings, SimulationLog,
};
use crate::engine::{validate_pair, AgentTag, EngineError, Purpose, SeedPlan};
use crate::mcm::{validate_agent, AgentSpec};
use crate::optimize::{
    inner_optimize, outer_adversarial, outer_random, AdversarialConfig, AdversarialReport,
    ErEnvFamily, ObjectiveSpec, OptimizeReport, OuterRound, PolicyEncoding,
};

pub use detectors::{detect, DetectorConfig, DetectorOutcome, DetectorReport};
pub use phase::{phase_sweep, sweep_csv, PhaseReport, PhaseSweepConfig};
pub use presets::{preset, Preset, PRESET_NAMES};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    /// The input could not be parsed or does not satisfy the invariants.
    #[error("configuration: {0}")]
    Config(String),
    /// The engine refused or abandoned the work.
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl HarnessError {
    /// Process exit code contract: 2 for invalid configuration, 3 for
    /// runtime violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 3,
        }
    }
}

/// Where the Environment spec comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentSource {
    Spec { spec: AgentSpec },
    /// Drawn from a random family; `draw` indexes independent members.
    Family {
        family: ErEnvFamily,
        #[serde(default)]
        draw: u64,
    },
}

/// Settings for the `optimize` entry point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub objective: ObjectiveSpec,
    pub budget: u64,
    pub restarts: u64,
    #[serde(default)]
    pub include_allocation: bool,
    #[serde(default)]
    pub edge_candidates: Vec<(usize, usize)>,
    #[serde(default)]
    pub outer: Option<OuterConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OuterConfig {
    /// Re-run the inner search against independently sampled environments.
    Random { family: ErEnvFamily, rounds: u64 },
    /// Best-response alternation against a responsive adversary.
    Adversarial(AdversarialConfig),
}

fn default_initial() -> InitialCondition {
    InitialCondition::UniformProduct
}

/// One experiment, fully specified. The snapshot of this struct plus
/// nothing else reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub scenario: Option<String>,
    pub society: AgentSpec,
    pub environment: EnvironmentSource,
    #[serde(default = "default_initial")]
    pub initial: InitialCondition,
    pub settings: SimSettings,
    #[serde(default)]
    pub detectors: DetectorConfig,
    #[serde(default)]
    pub optimize: Option<OptimizeConfig>,
    /// Default output directory; the CLI flag overrides it.
    #[serde(default)]
    pub out: Option<String>,
}

impl RunConfig {
    /// Materialize the Environment: verbatim, or a seeded family member.
    pub fn resolve_environment(&self) -> Result<AgentSpec, EngineError> {
        match &self.environment {
            EnvironmentSource::Spec { spec } => Ok(spec.clone()),
            EnvironmentSource::Family { family, draw } => {
                let plan = SeedPlan::new(self.seed);
                let mut rng = plan.rng_for(Purpose::EnvFamily, *draw, AgentTag::Environment, 0, 0);
                let env = family.sample(self.society.state_shape().cards(), &mut rng);
                validate_agent(&env)?;
                Ok(env)
            }
        }
    }

    /// Structural invariants: both specs validate, their shapes interlock,
    /// and any evolution policy or objective is itself well-formed.
    pub fn validate(&self) -> Result<(), EngineError> {
        validate_agent(&self.society)?;
        let environment = self.resolve_environment()?;
        validate_pair(&self.society, &environment)?;
        if let Some(policy) = &self.settings.evolution {
            policy.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        }
        if let HarvestMode::Kelly { outcome_machine, belief_machine, .. } = self.settings.harvest {
            if outcome_machine >= environment.n_machines() {
                return Err(EngineError::Config(format!(
                    "outcome machine {outcome_machine} out of range"
                )));
            }
            if belief_machine >= self.society.n_machines() {
                return Err(EngineError::Config(format!(
                    "belief machine {belief_machine} out of range"
                )));
            }
        }
        if let Some(opt) = &self.optimize {
            opt.objective.validate()?;
            if let Some(OuterConfig::Adversarial(cfg)) = &opt.outer {
                if cfg.responsiveness_floor < 0.0 {
                    return Err(EngineError::Config("responsiveness floor is negative".into()));
                }
            }
        }
        Ok(())
    }
}

/// Cap worker parallelism process-wide. Call once, before any parallel
/// work; later calls fail because the pool already exists.
pub fn configure_thread_cap(threads: usize) -> Result<(), HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))
}

/// Apply command-line overrides on top of a parsed config: the master seed,
/// and the replicate count of whichever ensemble modes are present.
pub fn apply_overrides(config: &mut RunConfig, seed: Option<u64>, replicates: Option<u64>) {
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(r) = replicates {
        match &mut config.settings.harvest {
            HarvestMode::Exact { .. } => {}
            HarvestMode::Plugin { replicates, .. } => *replicates = r,
            HarvestMode::Kelly { replicates, .. } => *replicates = r,
        }
        if let Some(opt) = &mut config.optimize {
            if opt.objective.replicates > 0 {
                opt.objective.replicates = r;
            }
        }
    }
}

/// Parse and validate a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, HarnessError> {
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(cfg)
}

/// A completed simulation with its detector report.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: RunConfig,
    pub log: SimulationLog,
    pub detectors: DetectorReport,
}

/// Run the simulation described by `config`.
pub fn execute_run(config: &RunConfig) -> Result<RunArtifacts, HarnessError> {
    config.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    let environment = config.resolve_environment()?;
    let plan = SeedPlan::new(config.seed);
    let log =
        run_simulation(&config.society, &environment, &config.initial, &config.settings, &plan)?;
    let detectors = detect(&log.rows, &config.detectors);
    Ok(RunArtifacts { config: config.clone(), log, detectors })
}

/// Result of the `optimize` entry point.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizeOutcome {
    Inner { report: OptimizeReport, best_society: AgentSpec },
    Random { rounds: Vec<OuterRound> },
    Adversarial { report: AdversarialReport },
}

/// Run the policy search described by `config.optimize`.
pub fn execute_optimize(config: &RunConfig) -> Result<OptimizeOutcome, HarnessError> {
    config.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    let opt = config
        .optimize
        .as_ref()
        .ok_or_else(|| HarnessError::Config("config has no optimize section".into()))?;
    let plan = SeedPlan::new(config.seed);
    let encoding =
        PolicyEncoding::new(&config.society, opt.include_allocation, &opt.edge_candidates)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
    let evolution = config.settings.evolution.as_ref();
    match &opt.outer {
        None => {
            let environment = config.resolve_environment()?;
            let report = inner_optimize(
                &config.society,
                &environment,
                evolution,
                &encoding,
                &opt.objective,
                opt.budget,
                opt.restarts,
                &plan,
            )?;
            let (best_society, _) = encoding.decode(&config.society, evolution, &report.best_point)?;
            Ok(OptimizeOutcome::Inner { report, best_society })
        }
        Some(OuterConfig::Random { family, rounds }) => {
            let rounds = outer_random(
                &config.society,
                family,
                &encoding,
                evolution,
                &opt.objective,
                *rounds,
                opt.budget,
                opt.restarts,
                &plan,
            )?;
            Ok(OptimizeOutcome::Random { rounds })
        }
        Some(OuterConfig::Adversarial(cfg)) => {
            let environment = config.resolve_environment()?;
            let report =
                outer_adversarial(&config.society, &environment, &opt.objective, cfg, &plan)?;
            Ok(OptimizeOutcome::Adversarial { report })
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TruncationMarker {
    truncated: HaltInfo,
}

/// The JSONL projection of a log: one row per line, plus a truncation
/// marker line when the run halted early. This byte stream is the replay
/// contract.
pub fn log_jsonl(log: &SimulationLog) -> Result<String, serde_json::Error> {
    let mut out = String::new();
    for row in &log.rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    if let Some(halt) = &log.halt {
        out.push_str(&serde_json::to_string(&TruncationMarker { truncated: halt.clone() })?);
        out.push('\n');
    }
    Ok(out)
}

/// Parse a JSONL log back into rows and the optional truncation marker.
pub fn parse_log(text: &str) -> Result<(Vec<LogRow>, Option<HaltInfo>), HarnessError> {
    let mut rows = Vec::new();
    let mut halt = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(row) = serde_json::from_str::<LogRow>(line) {
            rows.push(row);
        } else if let Ok(marker) = serde_json::from_str::<TruncationMarker>(line) {
            halt = Some(marker.truncated);
        } else {
            return Err(HarnessError::Config(format!("log line {} is not a row", i + 1)));
        }
    }
    Ok((rows, halt))
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Flat CSV projection of the per-iteration rows, including the detector
/// flag columns derived from them (blank where a detector is not
/// configured).
pub fn log_csv(rows: &[LogRow], detectors: &DetectorReport) -> String {
    let mut out = String::from(
        "iteration,mi,gfer_raw,gfer_effective,store_before,store_after,population,\
         machine_count,state_cardinality,msg_cardinality,tau,society_sigma,environment_sigma,\
         fan_out_cap,giant_component_fraction,realized_log_growth,discarded,clamped_any,\
         unlocked,escape,runaway\n",
    );
    let flag = |outcome: &Option<DetectorOutcome>, i: usize| {
        outcome
            .as_ref()
            .and_then(|d| d.flags.get(i))
            .map(|b| b.to_string())
            .unwrap_or_default()
    };
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.iteration,
            r.mi,
            r.gfer_raw,
            r.gfer_effective,
            csv_opt(r.store_before),
            csv_opt(r.store_after),
            r.population,
            r.machine_count,
            r.state_cardinality,
            r.msg_cardinality,
            r.tau,
            r.society_sigma,
            r.environment_sigma,
            r.fan_out_cap,
            r.giant_component_fraction,
            csv_opt(r.realized_log_growth),
            r.discarded,
            r.clamped_any,
            r.unlocked.join(";"),
            flag(&detectors.escape, i),
            flag(&detectors.runaway, i),
        ));
    }
    out
}

fn pretty<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Write the standard run directory: config snapshot, JSONL log, CSV
/// projection, detector report.
pub fn write_run_dir(dir: &Path, artifacts: &RunArtifacts) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), pretty(&artifacts.config)?)?;
    fs::write(dir.join("log.jsonl"), log_jsonl(&artifacts.log)?)?;
    fs::write(dir.join("log.csv"), log_csv(&artifacts.log.rows, &artifacts.detectors))?;
    fs::write(dir.join("detectors.json"), pretty(&artifacts.detectors)?)?;
    Ok(())
}

/// `run`: simulate and persist.
pub fn run_to_dir(config: &RunConfig, dir: &Path) -> Result<RunArtifacts, HarnessError> {
    let artifacts = execute_run(config)?;
    write_run_dir(dir, &artifacts)?;
    Ok(artifacts)
}

/// `optimize`: search and persist the outcome next to the config snapshot.
pub fn optimize_to_dir(config: &RunConfig, dir: &Path) -> Result<OptimizeOutcome, HarnessError> {
    let outcome = execute_optimize(config)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), pretty(config)?)?;
    fs::write(dir.join("optimize.json"), pretty(&outcome)?)?;
    fs::write(dir.join("history.csv"), history_csv(&outcome))?;
    Ok(outcome)
}

/// Flat candidate-by-candidate projection of a search outcome. Inner searches
/// list one row per evaluation keyed by restart; random outer searches re-key
/// rows by outer round; adversarial alternation lists both best-response
/// moves of each round (candidate 0 the Society's, 1 the environment's).
pub fn history_csv(outcome: &OptimizeOutcome) -> String {
    let mut out = String::from("round,candidate,score,accepted\n");
    let mut push = |round: u64, candidate: u64, score: f64, accepted: bool| {
        out.push_str(&format!("{round},{candidate},{score},{accepted}\n"));
    };
    match outcome {
        OptimizeOutcome::Inner { report, .. } => {
            for rec in &report.history {
                push(rec.round, rec.candidate, rec.score, rec.accepted);
            }
        }
        OptimizeOutcome::Random { rounds } => {
            for (round, outer) in rounds.iter().enumerate() {
                for (i, rec) in outer.report.history.iter().enumerate() {
                    push(round as u64, i as u64, rec.score, rec.accepted);
                }
            }
        }
        OptimizeOutcome::Adversarial { report } => {
            for (round, r) in report.rounds.iter().enumerate() {
                push(round as u64, 0, r.society_score, true);
                push(round as u64, 1, r.environment_score, true);
            }
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct PhaseRunConfig {
    seed: u64,
    sweep: PhaseSweepConfig,
}

/// Run a giant-component sweep and persist report + plots-ready CSV.
pub fn phase_to_dir(sweep: &PhaseSweepConfig, seed: u64, dir: &Path) -> Result<PhaseReport, HarnessError> {
    let report = phase_sweep(sweep, &SeedPlan::new(seed));
    fs::create_dir_all(dir)?;
    let cfg = PhaseRunConfig { seed, sweep: sweep.clone() };
    fs::write(dir.join("config.json"), pretty(&cfg)?)?;
    fs::write(dir.join("phase.json"), pretty(&report)?)?;
    fs::write(dir.join("sweep.csv"), sweep_csv(&report))?;
    Ok(report)
}

fn summary_csv(rows: &[LogRow], halt: &Option<HaltInfo>, report: &DetectorReport) -> String {
    let mut out = String::from("metric,value\n");
    let mut push = |k: &str, v: String| {
        out.push_str(k);
        out.push(',');
        out.push_str(&v);
        out.push('\n');
    };
    push("rows", rows.len().to_string());
    push("truncated_at", halt.as_ref().map(|h| h.iteration.to_string()).unwrap_or_default());
    let mean = |f: &dyn Fn(&LogRow) -> f64| -> String {
        if rows.is_empty() {
            String::new()
        } else {
            (rows.iter().map(f).sum::<f64>() / rows.len() as f64).to_string()
        }
    };
    push("total_gfer_effective", if rows.is_empty() {
        String::new()
    } else {
        rows.iter().map(|r| r.gfer_effective).sum::<f64>().to_string()
    });
    push("mean_gfer_effective", mean(&|r| r.gfer_effective));
    push("mean_mi", mean(&|r| r.mi));
    push("final_gfer_effective", rows.last().map(|r| r.gfer_effective.to_string()).unwrap_or_default());
    push("final_population", rows.last().map(|r| r.population.to_string()).unwrap_or_default());
    push("final_machine_count", rows.last().map(|r| r.machine_count.to_string()).unwrap_or_default());
    let realized: Vec<f64> = rows.iter().filter_map(|r| r.realized_log_growth).collect();
    push(
        "mean_realized_log_growth",
        if realized.is_empty() {
            String::new()
        } else {
            (realized.iter().sum::<f64>() / realized.len() as f64).to_string()
        },
    );
    push(
        "escape_first_flag",
        report
            .escape
            .as_ref()
            .and_then(|o| o.first_flag)
            .map(|t| t.to_string())
            .unwrap_or_default(),
    );
    push(
        "runaway_first_flag",
        report
            .runaway
            .as_ref()
            .and_then(|o| o.first_flag)
            .map(|t| t.to_string())
            .unwrap_or_default(),
    );
    out
}

/// `analyze`: recompute detectors and the summary from a run directory's
/// log alone, rewriting detectors.json and summary.csv. Pure in the log:
/// identical logs give identical bytes.
pub fn analyze_to_dir(dir: &Path) -> Result<DetectorReport, HarnessError> {
    let log_text = fs::read_to_string(dir.join("log.jsonl"))
        .map_err(|e| HarnessError::Config(format!("{}: {e}", dir.join("log.jsonl").display())))?;
    let (rows, halt) = parse_log(&log_text)?;
    let detector_cfg = fs::read_to_string(dir.join("config.json"))
        .ok()
        .and_then(|text| serde_json::from_str::<RunConfig>(&text).ok())
        .map(|cfg| cfg.detectors)
        .unwrap_or_default();
    let report = detect(&rows, &detector_cfg);
    fs::write(dir.join("detectors.json"), pretty(&report)?)?;
    fs::write(dir.join("summary.csv"), summary_csv(&rows, &halt, &report))?;
    Ok(report)
}

/// `experiment <scenario>`: run a named preset into `dir`. Overrides apply
/// on top of the shipped config.
pub fn run_scenario(
    name: &str,
    seed_override: Option<u64>,
    replicates_override: Option<u64>,
    dir: &Path,
) -> Result<(), HarnessError> {
    let Some(preset) = preset(name) else {
        return Err(HarnessError::Config(format!(
            "unknown scenario {name:?}; shipped scenarios: {}",
            PRESET_NAMES.join(", ")
        )));
    };
    match preset {
        Preset::Phase { seed, sweep } => {
            phase_to_dir(&sweep, seed_override.unwrap_or(seed), dir)?;
            Ok(())
        }
        Preset::Sim(mut config) => {
            apply_overrides(&mut config, seed_override, replicates_override);
            if config.optimize.is_some() {
                optimize_to_dir(&config, dir)?;
            } else {
                run_to_dir(&config, dir)?;
            }
            Ok(())
        }
    }
}
