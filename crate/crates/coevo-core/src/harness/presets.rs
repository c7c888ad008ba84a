//! Shipped experiment scenarios.
//!
//! Each preset is a complete, desk-scale configuration: `malthus` shows
//! escape flags under a superlinear harvest coupling, `runaway` trips the
//! acceleration detector, `phase` sweeps the giant-component transition,
//! `kelly` banks a betting stream whose slope matches the side-information
//! rate, and `adversarial` plays best-response rounds against a responsive
//! environment.

use crate::engine::sim::{
    DepletionConfig, GainMode, HarvestMode, InitialCondition, PopulationProxy, SimSettings,
};
use crate::harness::detectors::{DetectorConfig, EscapeParams, RunawayParams};
use crate::harness::phase::PhaseSweepConfig;
use crate::harness::{EnvironmentSource, OptimizeConfig, OuterConfig, RunConfig};
use crate::mcm::{AgentSpec, LinForm, MachineSpec, MessageGraph, Role, Rule};
use crate::optimize::{AdversarialConfig, ObjectiveSpec};

pub const PRESET_NAMES: [&str; 5] = ["malthus", "runaway", "phase", "kelly", "adversarial"];

/// A named scenario, ready to execute.
#[derive(Debug, Clone)]
pub enum Preset {
    Sim(Box<RunConfig>),
    Phase { seed: u64, sweep: PhaseSweepConfig },
}

/// One-bit machine whose next state is a modular-linear form of its own
/// state and the single observed coordinate.
fn bit_agent(own: u32, input: u32, sigma: f64) -> AgentSpec {
    AgentSpec {
        tau: 1,
        msg_cardinality: 1,
        sigma,
        input_shape: vec![2],
        graph: MessageGraph::empty(1, 1),
        machines: vec![MachineSpec {
            id: 0,
            cardinality: 2,
            role: Role::Generic,
            rule: Rule::LinearRing {
                state: LinForm { own, input: vec![input], inbox: vec![], constant: 0 },
                message: LinForm::zero(1, 0),
            },
        }],
    }
}

fn copying_society(sigma: f64) -> AgentSpec {
    bit_agent(0, 1, sigma)
}

fn holding_environment() -> AgentSpec {
    bit_agent(1, 0, 0.0)
}

fn echoing_environment() -> AgentSpec {
    bit_agent(0, 1, 0.0)
}

fn base_sim(seed: u64, scenario: &str, settings: SimSettings, detectors: DetectorConfig) -> RunConfig {
    RunConfig {
        seed,
        scenario: Some(scenario.to_string()),
        society: copying_society(0.0),
        environment: EnvironmentSource::Spec { spec: holding_environment() },
        initial: InitialCondition::UniformProduct,
        settings,
        detectors,
        optimize: None,
        out: None,
    }
}

fn malthus() -> RunConfig {
    base_sim(
        11,
        "malthus",
        SimSettings {
            iterations: 24,
            harvest: HarvestMode::Exact { enumeration_limit: 1 << 16 },
            gain: 1.3,
            gain_mode: GainMode::Compound,
            depletion: None,
            population: PopulationProxy::MachineCount,
            evolution: None,
        },
        DetectorConfig {
            escape: Some(EscapeParams { delta: 0.05, consecutive: 3 }),
            runaway: Some(RunawayParams { threshold: 0.2, consecutive: 3 }),
        },
    )
}

fn runaway() -> RunConfig {
    base_sim(
        12,
        "runaway",
        SimSettings {
            iterations: 20,
            harvest: HarvestMode::Exact { enumeration_limit: 1 << 16 },
            gain: 1.15,
            gain_mode: GainMode::Accelerating,
            depletion: Some(DepletionConfig { initial: 1e30, replenish: 0.0 }),
            population: PopulationProxy::MachineCount,
            evolution: None,
        },
        DetectorConfig {
            escape: Some(EscapeParams { delta: 0.05, consecutive: 3 }),
            runaway: Some(RunawayParams { threshold: 0.2, consecutive: 3 }),
        },
    )
}

fn kelly() -> RunConfig {
    let mut cfg = base_sim(
        14,
        "kelly",
        SimSettings {
            iterations: 8192,
            harvest: HarvestMode::Kelly { replicates: 1024, outcome_machine: 0, belief_machine: 0 },
            gain: 1.0,
            gain_mode: GainMode::Steady,
            depletion: None,
            population: PopulationProxy::MachineCount,
            evolution: None,
        },
        DetectorConfig::default(),
    );
    // Side information: the Society sees the held bit through a noisy
    // channel, so its boundary state is a corrupted copy of the outcome.
    cfg.society = copying_society(0.2);
    cfg
}

fn adversarial() -> RunConfig {
    let mut cfg = base_sim(
        15,
        "adversarial",
        SimSettings {
            iterations: 2,
            harvest: HarvestMode::Exact { enumeration_limit: 1 << 16 },
            gain: 1.0,
            gain_mode: GainMode::Steady,
            depletion: None,
            population: PopulationProxy::MachineCount,
            evolution: None,
        },
        DetectorConfig::default(),
    );
    cfg.environment = EnvironmentSource::Spec { spec: echoing_environment() };
    cfg.optimize = Some(OptimizeConfig {
        objective: ObjectiveSpec {
            horizon: 2,
            discount: 1.0,
            replicates: 0,
            enumeration_limit: 1 << 16,
            initial: InitialCondition::UniformProduct,
        },
        budget: 128,
        restarts: 4,
        include_allocation: false,
        edge_candidates: vec![],
        outer: Some(OuterConfig::Adversarial(AdversarialConfig {
            rounds: 2,
            society_budget: 96,
            environment_budget: 96,
            restarts: 2,
            responsiveness_floor: 0.4,
            enumeration_limit: 1 << 16,
        })),
    });
    cfg
}

/// Look up a shipped scenario by name.
pub fn preset(name: &str) -> Option<Preset> {
    match name {
        "malthus" => Some(Preset::Sim(Box::new(malthus()))),
        "runaway" => Some(Preset::Sim(Box::new(runaway()))),
        "phase" => Some(Preset::Phase { seed: 13, sweep: PhaseSweepConfig::default() }),
        "kelly" => Some(Preset::Sim(Box::new(kelly()))),
        "adversarial" => Some(Preset::Sim(Box::new(adversarial()))),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{execute_optimize, execute_run, OptimizeOutcome};
    use approx::assert_abs_diff_eq;

    #[test]
    fn every_preset_parses_and_validates() {
        for name in PRESET_NAMES {
            match preset(name).unwrap() {
                Preset::Sim(cfg) => cfg.validate().unwrap(),
                Preset::Phase { sweep, .. } => {
                    assert!(!sweep.mean_degrees.is_empty());
                }
            }
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn malthus_flags_escape_only_under_superlinear_coupling() {
        let cfg = malthus();
        let artifacts = execute_run(&cfg).unwrap();
        let escape = artifacts.detectors.escape.unwrap();
        assert_eq!(escape.first_flag, Some(3), "1.3x compounding flags at the third step");
        // Same system with the coupling removed: per-capita harvest is flat.
        let mut flat = malthus();
        flat.settings.gain = 1.0;
        let artifacts = execute_run(&flat).unwrap();
        assert_eq!(artifacts.detectors.escape.unwrap().first_flag, None);
        assert!(artifacts.log.rows.iter().all(|r| (r.gfer_effective - 1.0).abs() < 1e-12));
    }

    #[test]
    fn runaway_preset_trips_the_acceleration_detector() {
        let artifacts = execute_run(&runaway()).unwrap();
        let out = artifacts.detectors.runaway.unwrap();
        // Second difference of log2 gain^(t^2) is 2 log2(1.15) ~ 0.403.
        assert_eq!(out.first_flag, Some(4));
        // The compounding preset must NOT trip it: zero acceleration.
        let artifacts = execute_run(&malthus()).unwrap();
        assert_eq!(artifacts.detectors.runaway.unwrap().first_flag, None);
    }

    #[test]
    fn kelly_preset_banks_the_side_information_rate() {
        let artifacts = execute_run(&kelly()).unwrap();
        let realized: Vec<f64> =
            artifacts.log.rows.iter().filter_map(|r| r.realized_log_growth).collect();
        assert_eq!(realized.len(), 8192);
        let slope = realized.iter().sum::<f64>() / realized.len() as f64;
        // sigma = 0.2 acts as a binary symmetric channel with flip
        // probability 0.1: I = 1 - h2(0.1).
        let h2 = |p: f64| -p * p.log2() - (1.0 - p) * (1.0 - p).log2();
        let rate = 1.0 - h2(0.1);
        assert_abs_diff_eq!(slope, rate, epsilon = 0.02);
    }

    #[test]
    fn adversarial_preset_plays_two_legal_rounds() {
        let outcome = execute_optimize(&adversarial()).unwrap();
        let OptimizeOutcome::Adversarial { report } = outcome else {
            panic!("adversarial preset must route to best-response alternation");
        };
        assert_eq!(report.rounds.len(), 2);
        for round in &report.rounds {
            assert!(round.responsiveness >= 0.4);
        }
    }
}
