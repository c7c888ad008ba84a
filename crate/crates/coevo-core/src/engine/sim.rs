//! The iterated co-evolution loop: harvest, gain, depletion, evolution.
//!
//! Each iteration runs the two-agent exchange, measures the harvest as
//! mutual information between the Society's boundary state and the
//! Environment's end state, scales it by a gain schedule, optionally draws
//! it down against a finite store, and (optionally) spends the effective
//! harvest on parameter evolution. Three harvest estimators are available:
//! an exact joint-distribution chain, a sampled plug-in ensemble, and a
//! betting variant that tracks realized log wealth growth alongside the
//! information-rate expectation.
//!
//! Everything downstream of the seed plan is deterministic; a run is fully
//! reproducible from `(specs, initial condition, settings, master seed)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::ObservationChannel;
use crate::evolution::{EvolutionEngine, EvolutionPolicy, StateOrigin};
use crate::harvest::{
    self, side_info_allocation, side_info_growth, JointCounts, JointDist, KellyGame,
};
use crate::mcm::{validate_agent, AgentSpec, Role};
use crate::space::Shape;

use super::ensemble::{draw_particles, ensemble_iteration};
use super::exact::ExactPropagator;
use super::{validate_pair, AgentState, EngineError, SeedPlan};

/// Dense joint counts over full state products are refused beyond this many
/// cells; exact mode uses the configurable enumeration limit instead.
const PLUGIN_SPACE_LIMIT: u64 = 1 << 24;

/// How the per-iteration harvest is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HarvestMode {
    /// Propagate the exact joint law of (Society, Environment) states.
    /// Stochastic rules, channels, and boundary mixing are all enumerated;
    /// ledgers are unsupported.
    Exact { enumeration_limit: u64 },
    /// Monte-Carlo particle ensemble with the plug-in estimator.
    Plugin {
        replicates: u64,
        #[serde(default)]
        miller_madow: bool,
    },
    /// Plug-in ensemble reframed as sequential betting on one Environment
    /// machine's end state, with one Society machine's boundary state as
    /// side information. Fair odds come from the smoothed outcome marginal.
    Kelly {
        replicates: u64,
        #[serde(default)]
        outcome_machine: usize,
        #[serde(default)]
        belief_machine: usize,
    },
}

/// Iteration-indexed multiplier applied to the measured harvest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// `gain` every iteration.
    #[default]
    Steady,
    /// `gain^t`: log-multiplier grows linearly.
    Compound,
    /// `gain^(t^2)`: log-multiplier accelerates, so the second difference of
    /// the log harvest is positive — the runaway signature.
    Accelerating,
}

pub fn gain_multiplier(mode: GainMode, gain: f64, iteration: u64) -> f64 {
    match mode {
        GainMode::Steady => gain,
        GainMode::Compound => gain.powf(iteration as f64),
        GainMode::Accelerating => gain.powf((iteration * iteration) as f64),
    }
}

/// Finite energy reservoir the harvest draws against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepletionConfig {
    pub initial: f64,
    /// Added back after each iteration's draw-down.
    #[serde(default)]
    pub replenish: f64,
}

/// What "population" means for the growth-ratio detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PopulationProxy {
    /// Number of generic Society machines.
    #[default]
    MachineCount,
    /// Total Society state storage in bits: sum of log2(cardinality).
    StateBits,
    Constant { value: f64 },
}

/// Joint law of the two agents' states at the start of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    Point { society: Vec<u32>, environment: Vec<u32> },
    UniformProduct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub iterations: u64,
    pub harvest: HarvestMode,
    /// Base gain; 1.0 leaves the measured harvest unscaled.
    pub gain: f64,
    #[serde(default)]
    pub gain_mode: GainMode,
    #[serde(default)]
    pub depletion: Option<DepletionConfig>,
    #[serde(default)]
    pub population: PopulationProxy,
    #[serde(default)]
    pub evolution: Option<EvolutionPolicy>,
}

impl SimSettings {
    /// Minimal settings: fixed structure, unscaled exact harvest.
    pub fn exact(iterations: u64) -> Self {
        SimSettings {
            iterations,
            harvest: HarvestMode::Exact { enumeration_limit: 1 << 20 },
            gain: 1.0,
            gain_mode: GainMode::Steady,
            depletion: None,
            population: PopulationProxy::MachineCount,
            evolution: None,
        }
    }
}

/// One iteration's log line. Field order is the serialization order and is
/// part of the replay contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: u64,
    /// Information measure in bits: exact or plug-in mutual information, or
    /// the expected log-growth gain in betting mode.
    pub mi: f64,
    /// Harvest after the gain multiplier, before depletion.
    pub gfer_raw: f64,
    /// Harvest actually banked after the store draw-down.
    pub gfer_effective: f64,
    pub store_before: Option<f64>,
    pub store_after: Option<f64>,
    pub population: f64,
    pub machine_count: u32,
    pub state_cardinality: u32,
    pub msg_cardinality: u32,
    pub tau: u32,
    pub society_sigma: f64,
    pub environment_sigma: f64,
    pub fan_out_cap: u32,
    pub giant_component_fraction: f64,
    /// Betting mode only: replicate 0's realized log2 wealth growth.
    pub realized_log_growth: Option<f64>,
    /// Energy allocated but not embodied by the evolved parameters
    /// (rounding and ceilings); negative when floors subsidize structure.
    pub discarded: f64,
    pub clamped_any: bool,
    /// Structural stages unlocked at the end of this iteration.
    pub unlocked: Vec<String>,
}

/// Why a run stopped before its configured horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaltInfo {
    pub iteration: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationLog {
    pub rows: Vec<LogRow>,
    pub halt: Option<HaltInfo>,
    pub final_society: AgentSpec,
    pub final_environment: AgentSpec,
}

fn generic_count(spec: &AgentSpec) -> u32 {
    spec.machines.iter().filter(|m| matches!(m.role, Role::Generic)).count() as u32
}

fn generic_card(spec: &AgentSpec) -> u32 {
    spec.machines
        .iter()
        .filter(|m| matches!(m.role, Role::Generic))
        .map(|m| m.cardinality)
        .max()
        .unwrap_or(1)
}

fn population_of(proxy: PopulationProxy, spec: &AgentSpec) -> f64 {
    match proxy {
        PopulationProxy::MachineCount => generic_count(spec) as f64,
        PopulationProxy::StateBits => {
            spec.machines.iter().map(|m| (m.cardinality as f64).log2()).sum()
        }
        PopulationProxy::Constant { value } => value,
    }
}

/// Exact joint law over (Society flat state, Environment flat state).
type PairDist = BTreeMap<(u64, u64), f64>;

/// Advance the exact joint law by one iteration and return the new law along
/// with the harvest joint (Society boundary rows, Environment end columns).
fn exact_iteration(
    society: &AgentSpec,
    environment: &AgentSpec,
    joint: &PairDist,
    limit: u64,
) -> Result<(PairDist, JointDist), EngineError> {
    let s_shape = society.state_shape();
    let v_shape = environment.state_shape();
    let s_total = s_shape.total().ok_or(EngineError::SpaceTooLarge { total: u64::MAX, limit })?;
    let v_total = v_shape.total().ok_or(EngineError::SpaceTooLarge { total: u64::MAX, limit })?;
    let pair_total = s_total.saturating_mul(v_total);
    if pair_total > limit {
        return Err(EngineError::SpaceTooLarge { total: pair_total, limit });
    }
    let mut soc_prop = ExactPropagator::new(society, limit)?;
    let mut env_prop = ExactPropagator::new(environment, limit)?;
    let ch_s = ObservationChannel::new(society.sigma, v_shape.clone());
    let ch_e = ObservationChannel::new(environment.sigma, s_shape.clone());

    let mut next: PairDist = BTreeMap::new();
    for (&(s, v), &p) in joint {
        let v_coords = v_shape.unflatten(v);
        for &(y_flat, cy) in &ch_s.distribution(&v_coords) {
            let y_coords = v_shape.unflatten(y_flat);
            let ds = soc_prop.batch(s, &y_coords, society.tau);
            for &(s2, ps) in ds.iter() {
                let s2_coords = s_shape.unflatten(s2);
                for &(z_flat, cz) in &ch_e.distribution(&s2_coords) {
                    let z_coords = s_shape.unflatten(z_flat);
                    let dv = env_prop.batch(v, &z_coords, environment.tau);
                    let w = p * cy * ps * cz;
                    for &(v2, pv) in dv.iter() {
                        *next.entry((s2, v2)).or_insert(0.0) += w * pv;
                    }
                }
            }
        }
    }
    let mut harvest_joint = JointDist::zeros(s_total as usize, v_total as usize);
    for (&(s2, v2), &q) in &next {
        *harvest_joint.at_mut(s2, v2) += q;
    }
    Ok((next, harvest_joint))
}

/// Remap a flat Society state across an evolution step.
fn remap_flat(flat: u64, old_shape: &Shape, new_shape: &Shape, map: &[StateOrigin]) -> u64 {
    let old = old_shape.unflatten(flat);
    let coords: Vec<u32> = map
        .iter()
        .zip(new_shape.cards())
        .map(|(origin, &card)| match origin {
            StateOrigin::Kept(j) => old[*j] % card,
            StateOrigin::Fresh(v) => v % card,
        })
        .collect();
    new_shape.flatten(&coords)
}

/// Rebuild a Society runtime state for an evolved spec: surviving machines
/// keep their state (mod the new cardinality) and their tapes; fresh
/// machines start at their declared initial state.
fn remap_agent_state(old: &AgentState, new_spec: &AgentSpec, map: &[StateOrigin]) -> AgentState {
    let states: Vec<u32> = map
        .iter()
        .zip(new_spec.state_shape().cards())
        .map(|(origin, &card)| match origin {
            StateOrigin::Kept(j) => old.states[*j] % card,
            StateOrigin::Fresh(v) => v % card,
        })
        .collect();
    let mut state = AgentState::with_states(new_spec, states);
    for (new_idx, origin) in map.iter().enumerate() {
        if let StateOrigin::Kept(j) = origin {
            if let Some(tape) = old.tapes.get(j) {
                state.tapes.insert(new_idx, tape.clone());
            }
        }
    }
    state
}

/// Betting-mode bookkeeping for one iteration.
struct KellyOutcome {
    expected: f64,
    realized: f64,
}

fn kelly_iteration(
    counts: &JointCounts,
    s_shape: &Shape,
    v_shape: &Shape,
    belief_machine: usize,
    outcome_machine: usize,
    boundary: &[u32],
    env_end: &[u32],
) -> KellyOutcome {
    let outcomes = v_shape.cards()[outcome_machine] as usize;
    let beliefs = s_shape.cards()[belief_machine] as usize;
    // Marginal counts over (outcome, belief) with add-one smoothing so odds
    // and bets are always defined.
    let mut small = JointDist::zeros(outcomes, beliefs);
    let total = counts.total() + (outcomes * beliefs) as u64;
    for r in 0..counts.rows() as u64 {
        let y = s_shape.unflatten(r)[belief_machine] as u64;
        for c in 0..counts.cols() as u64 {
            let n = counts.at(r, c);
            if n > 0 {
                let w = v_shape.unflatten(c)[outcome_machine] as u64;
                *small.at_mut(w, y) += n as f64 / total as f64;
            }
        }
    }
    for w in 0..outcomes as u64 {
        for y in 0..beliefs as u64 {
            *small.at_mut(w, y) += 1.0 / total as f64;
        }
    }
    let probs = small.row_marginal();
    let odds: Vec<f64> = probs.iter().map(|&p| 1.0 / p).collect();
    let game = KellyGame { probs: probs.clone(), odds: odds.clone() };
    let per_obs = side_info_allocation(&small);
    let expected = side_info_growth(&game, &small, &per_obs);
    let w0 = env_end[outcome_machine] as usize;
    let y0 = boundary[belief_machine] as usize;
    let realized = (odds[w0] * per_obs[y0][w0]).log2();
    KellyOutcome { expected, realized }
}

/// Run the full loop. Pre-flight validation failures are errors; failures
/// after evolution steps halt the run honestly with the rows so far.
pub fn run_simulation(
    society: &AgentSpec,
    environment: &AgentSpec,
    initial: &InitialCondition,
    settings: &SimSettings,
    plan: &SeedPlan,
) -> Result<SimulationLog, EngineError> {
    validate_agent(society)?;
    validate_agent(environment)?;
    validate_pair(society, environment)?;
    if let Some(policy) = &settings.evolution {
        policy.validate().map_err(|e| EngineError::Config(e.to_string()))?;
    }
    let mut soc = society.clone();
    let mut env = environment.clone();
    let mut evolution = settings
        .evolution
        .as_ref()
        .map(|policy| EvolutionEngine::new(policy.clone()).expect("policy validated above"));

    let s_total = soc.state_shape().total().ok_or(EngineError::SpaceTooLarge {
        total: u64::MAX,
        limit: PLUGIN_SPACE_LIMIT,
    })?;
    let v_total = env.state_shape().total().ok_or(EngineError::SpaceTooLarge {
        total: u64::MAX,
        limit: PLUGIN_SPACE_LIMIT,
    })?;

    // Harvest-state: exactly one of these is live, per the configured mode.
    let mut exact_joint: Option<PairDist> = None;
    let mut particles: Option<Vec<(AgentState, AgentState)>> = None;

    let boundary_dist = |s_total: u64, v_total: u64| -> JointDist {
        match initial {
            InitialCondition::Point { society: s, environment: v } => JointDist::point(
                s_total as usize,
                v_total as usize,
                soc.state_shape().flatten(s),
                env.state_shape().flatten(v),
            ),
            InitialCondition::UniformProduct => {
                JointDist::uniform(s_total as usize, v_total as usize)
            }
        }
    };

    match &settings.harvest {
        HarvestMode::Exact { enumeration_limit } => {
            // Fail fast on systems the exact chain cannot represent.
            ExactPropagator::new(&soc, *enumeration_limit)?;
            ExactPropagator::new(&env, *enumeration_limit)?;
            let mut joint: PairDist = BTreeMap::new();
            match initial {
                InitialCondition::Point { society: s, environment: v } => {
                    joint.insert((soc.state_shape().flatten(s), env.state_shape().flatten(v)), 1.0);
                }
                InitialCondition::UniformProduct => {
                    let p = 1.0 / (s_total * v_total) as f64;
                    for s in 0..s_total {
                        for v in 0..v_total {
                            joint.insert((s, v), p);
                        }
                    }
                }
            }
            exact_joint = Some(joint);
        }
        HarvestMode::Plugin { replicates, .. } | HarvestMode::Kelly { replicates, .. } => {
            if s_total.saturating_mul(v_total) > PLUGIN_SPACE_LIMIT {
                return Err(EngineError::SpaceTooLarge {
                    total: s_total.saturating_mul(v_total),
                    limit: PLUGIN_SPACE_LIMIT,
                });
            }
            let dist = boundary_dist(s_total, v_total);
            particles = Some(draw_particles(&soc, &env, &dist, *replicates, plan, 0));
        }
    }

    let mut store = settings.depletion.map(|d| d.initial);
    let mut rows: Vec<LogRow> = Vec::with_capacity(settings.iterations as usize);
    let mut halt: Option<HaltInfo> = None;

    for t in 0..settings.iterations {
        // --- Harvest measurement. ---
        let (mi, realized) = match &settings.harvest {
            HarvestMode::Exact { enumeration_limit } => {
                let joint = exact_joint.as_mut().expect("exact state initialized");
                match exact_iteration(&soc, &env, joint, *enumeration_limit) {
                    Ok((next, harvest_joint)) => {
                        *joint = next;
                        (harvest::mi_exact(&harvest_joint), None)
                    }
                    Err(e) => {
                        halt = Some(HaltInfo { iteration: t, reason: e.to_string() });
                        break;
                    }
                }
            }
            HarvestMode::Plugin { miller_madow, .. } => {
                let parts = particles.as_mut().expect("particles initialized");
                let (counts, _trace) = ensemble_iteration(&soc, &env, parts, plan, t);
                (harvest::mi_plugin(&counts, *miller_madow), None)
            }
            HarvestMode::Kelly { outcome_machine, belief_machine, .. } => {
                let parts = particles.as_mut().expect("particles initialized");
                if *belief_machine >= soc.n_machines() || *outcome_machine >= env.n_machines() {
                    halt = Some(HaltInfo {
                        iteration: t,
                        reason: "betting machine index out of range".into(),
                    });
                    break;
                }
                let (counts, trace) = ensemble_iteration(&soc, &env, parts, plan, t);
                let outcome = kelly_iteration(
                    &counts,
                    &soc.state_shape(),
                    &env.state_shape(),
                    *belief_machine,
                    *outcome_machine,
                    &trace.society_boundary,
                    &trace.environment_end,
                );
                (outcome.expected, Some(outcome.realized))
            }
        };

        // --- Gain, then depletion. ---
        let banked = match realized {
            Some(r) => r.max(0.0),
            None => mi,
        };
        let gfer_raw = gain_multiplier(settings.gain_mode, settings.gain, t) * banked;
        let report = harvest::settle(gfer_raw, store, realized);
        let gfer_effective = report.effective;
        store = report.store_after;
        if let (Some(s), Some(d)) = (store.as_mut(), settings.depletion.as_ref()) {
            *s += d.replenish;
        }

        // --- Evolution. ---
        let (discarded, clamped_any, unlocked, next_specs) = match evolution.as_mut() {
            Some(engine) => {
                let step = engine.step(&soc, &env, gfer_effective, plan, t);
                (
                    step.report.discarded,
                    step.report.clamped.iter().any(|&c| c),
                    step.unlocked.clone(),
                    Some(step),
                )
            }
            None => (0.0, false, Vec::new(), None),
        };

        rows.push(LogRow {
            iteration: t,
            mi,
            gfer_raw,
            gfer_effective,
            store_before: report.store_before,
            store_after: report.store_after,
            population: population_of(settings.population, &soc),
            machine_count: generic_count(&soc),
            state_cardinality: generic_card(&soc),
            msg_cardinality: soc.msg_cardinality,
            tau: soc.tau,
            society_sigma: soc.sigma,
            environment_sigma: env.sigma,
            fan_out_cap: soc.graph.fan_out_cap,
            giant_component_fraction: soc.graph.giant_component_fraction(),
            realized_log_growth: realized,
            discarded,
            clamped_any,
            unlocked,
        });

        // --- Apply the evolved structure for the next iteration. ---
        if let Some(step) = next_specs {
            if let Err(e) = validate_agent(&step.society)
                .and_then(|_| validate_agent(&step.environment))
                .map_err(EngineError::from)
                .and_then(|_| validate_pair(&step.society, &step.environment))
            {
                halt = Some(HaltInfo { iteration: t, reason: e.to_string() });
                break;
            }
            let old_shape = soc.state_shape();
            let new_shape = step.society.state_shape();
            if let Some(joint) = exact_joint.as_mut() {
                let mut remapped: PairDist = BTreeMap::new();
                for (&(s, v), &p) in joint.iter() {
                    let s2 = remap_flat(s, &old_shape, &new_shape, &step.state_map);
                    *remapped.entry((s2, v)).or_insert(0.0) += p;
                }
                *joint = remapped;
            }
            if let Some(parts) = particles.as_mut() {
                for (s_state, _) in parts.iter_mut() {
                    *s_state = remap_agent_state(s_state, &step.society, &step.state_map);
                }
            }
            soc = step.society;
            env = step.environment;
        }
    }

    Ok(SimulationLog { rows, halt, final_society: soc, final_environment: env })
}
