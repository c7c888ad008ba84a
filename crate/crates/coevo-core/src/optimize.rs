//! Policy search over Society designs.
//!
//! A policy point is a flat vector over the Society's tunable coordinates:
//! modular-linear rule coefficients of generic machines, optionally the
//! softmax logits of the evolution allocation, optionally presence bits for
//! a set of candidate message edges. Lookup-table and kernel rules, ledgers,
//! and stores are frozen — the search never rewrites them.
//!
//! The inner optimizer is random-restart hill climbing with
//! single-coordinate neighbors. Every candidate is scored by running the
//! simulation loop under the *same* seed plan (common random numbers), so
//! comparisons between neighbors are deterministic and low-variance. Outer
//! loops wrap the inner search against sampled environment families or an
//! adversarial environment that minimizes the Society's harvest subject to
//! a responsiveness floor.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::exact::ExactPropagator;
use crate::engine::sim::{
    run_simulation, HarvestMode, InitialCondition, SimSettings,
};
use crate::engine::{AgentTag, EngineError, Purpose, SeedPlan};
use crate::evolution::EvolutionPolicy;
use crate::harvest::{mi_exact, JointDist};
use crate::mcm::{validate_agent, AgentSpec, MessageGraph, Role, Rule};

/// Which coefficient of a modular-linear rule a coordinate drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffSlot {
    StateOwn,
    StateInput(usize),
    /// Index into the union-graph parent list of the machine.
    StateInbox(usize),
    StateConst,
    MsgOwn,
    MsgInput(usize),
    MsgInbox(usize),
    MsgConst,
}

/// One tunable coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coord {
    RuleCoeff { machine: usize, slot: CoeffSlot, modulus: u32 },
    /// Softmax logit for one of the seven allocation entries.
    AllocationLogit { param: usize },
    /// Presence bit for one candidate edge.
    EdgeToggle { edge: (usize, usize) },
}

/// The coordinate system of a policy search over one agent spec.
#[derive(Debug, Clone)]
pub struct PolicyEncoding {
    coords: Vec<Coord>,
    /// Base edges that are not up for toggling.
    fixed_edges: Vec<(usize, usize)>,
    /// Per machine: parents under the union graph (all candidates on).
    union_parents: Vec<Vec<usize>>,
}

impl PolicyEncoding {
    /// Enumerate the tunable coordinates of `base`. Candidate edges may only
    /// end at generic machines with modular-linear rules (their inbox
    /// coefficient vectors resize with the decoded graph); other rules'
    /// input domains are frozen.
    pub fn new(
        base: &AgentSpec,
        include_allocation: bool,
        edge_candidates: &[(usize, usize)],
    ) -> Result<Self, EngineError> {
        for &(u, v) in edge_candidates {
            if u >= base.n_machines() || v >= base.n_machines() {
                return Err(EngineError::Config(format!("candidate edge ({u}, {v}) out of range")));
            }
            let dst = &base.machines[v];
            if !(matches!(dst.role, Role::Generic) && matches!(dst.rule, Rule::LinearRing { .. })) {
                return Err(EngineError::Config(format!(
                    "candidate edge ({u}, {v}) targets a frozen machine"
                )));
            }
        }
        let candidates: Vec<(usize, usize)> = edge_candidates.to_vec();
        let fixed_edges: Vec<(usize, usize)> = base
            .graph
            .edges
            .iter()
            .copied()
            .filter(|e| !candidates.contains(e))
            .collect();
        let mut union_edges = fixed_edges.clone();
        for &e in &candidates {
            if !union_edges.contains(&e) {
                union_edges.push(e);
            }
        }
        let union_graph = MessageGraph {
            nodes: base.n_machines(),
            edges: union_edges,
            fan_out_cap: base.graph.fan_out_cap,
        };
        let union_parents: Vec<Vec<usize>> =
            (0..base.n_machines()).map(|v| union_graph.parents(v)).collect();

        let mut coords = Vec::new();
        for (v, m) in base.machines.iter().enumerate() {
            if !matches!(m.role, Role::Generic) {
                continue;
            }
            if !matches!(m.rule, Rule::LinearRing { .. }) {
                continue;
            }
            let mut push = |slot: CoeffSlot, modulus: u32| {
                if modulus > 1 {
                    coords.push(Coord::RuleCoeff { machine: v, slot, modulus });
                }
            };
            let card = m.cardinality;
            let msg = base.msg_cardinality;
            push(CoeffSlot::StateOwn, card);
            for i in 0..base.input_shape.len() {
                push(CoeffSlot::StateInput(i), card);
            }
            for j in 0..union_parents[v].len() {
                push(CoeffSlot::StateInbox(j), card);
            }
            push(CoeffSlot::StateConst, card);
            push(CoeffSlot::MsgOwn, msg);
            for i in 0..base.input_shape.len() {
                push(CoeffSlot::MsgInput(i), msg);
            }
            for j in 0..union_parents[v].len() {
                push(CoeffSlot::MsgInbox(j), msg);
            }
            push(CoeffSlot::MsgConst, msg);
        }
        if include_allocation {
            for param in 0..7 {
                coords.push(Coord::AllocationLogit { param });
            }
        }
        for &edge in &candidates {
            coords.push(Coord::EdgeToggle { edge });
        }
        Ok(PolicyEncoding { coords, fixed_edges, union_parents })
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// A uniformly random starting point.
    pub fn random_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.coords
            .iter()
            .map(|c| match c {
                Coord::RuleCoeff { modulus, .. } => rng.random_range(0..*modulus) as f64,
                Coord::AllocationLogit { .. } => rng.random::<f64>() * 4.0 - 2.0,
                Coord::EdgeToggle { .. } => rng.random_range(0..2u32) as f64,
            })
            .collect()
    }

    /// Single-coordinate neighbor: one discrete resample, logit nudge, or
    /// edge flip.
    pub fn neighbor(&self, point: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        debug_assert_eq!(point.len(), self.coords.len());
        let mut next = point.to_vec();
        let i = rng.random_range(0..self.coords.len());
        match &self.coords[i] {
            Coord::RuleCoeff { modulus, .. } => {
                // Uniform over the *other* values.
                let cur = next[i] as u32;
                let step = rng.random_range(1..*modulus);
                next[i] = ((cur + step) % modulus) as f64;
            }
            Coord::AllocationLogit { .. } => {
                next[i] += rng.random::<f64>() * 2.0 - 1.0;
            }
            Coord::EdgeToggle { .. } => {
                next[i] = 1.0 - next[i];
            }
        }
        next
    }

    /// Decode a point onto the base spec (and evolution policy, when the
    /// encoding carries allocation logits). Fails when the decoded spec does
    /// not validate, e.g. a toggle pattern breaching the fan-out cap.
    pub fn decode(
        &self,
        base: &AgentSpec,
        policy: Option<&EvolutionPolicy>,
        point: &[f64],
    ) -> Result<(AgentSpec, Option<EvolutionPolicy>), EngineError> {
        assert_eq!(point.len(), self.coords.len(), "point does not fit the encoding");
        let mut spec = base.clone();

        // Graph first: rule inbox lengths depend on it.
        let mut edges = self.fixed_edges.clone();
        for (c, &value) in self.coords.iter().zip(point) {
            if let Coord::EdgeToggle { edge } = c {
                if value > 0.5 && !edges.contains(edge) {
                    edges.push(*edge);
                }
            }
        }
        // Base edges that are candidates but not toggled on stay out, so the
        // graph is exactly fixed ∪ enabled.
        spec.graph = MessageGraph {
            nodes: base.n_machines(),
            edges,
            fan_out_cap: base.graph.fan_out_cap,
        };

        // Resize inbox coefficient vectors to the decoded parent lists.
        for (v, m) in spec.machines.iter_mut().enumerate() {
            if let Rule::LinearRing { state, message } = &mut m.rule {
                let parents = spec.graph.parents(v);
                let from_union = |form: &[u32], p: usize| {
                    self.union_parents[v]
                        .iter()
                        .position(|&up| up == p)
                        .and_then(|slot| form.get(slot).copied())
                        .unwrap_or(0)
                };
                state.inbox = parents.iter().map(|&p| from_union(&state.inbox, p)).collect();
                message.inbox = parents.iter().map(|&p| from_union(&message.inbox, p)).collect();
            }
        }
        // Apply the rule coefficients against union parent slots.
        for (c, &value) in self.coords.iter().zip(point) {
            if let Coord::RuleCoeff { machine, slot, modulus } = c {
                let val = (value as u32) % modulus;
                let parents = spec.graph.parents(*machine);
                if let Rule::LinearRing { state, message } = &mut spec.machines[*machine].rule {
                    let slot_of = |j: usize| {
                        let target = self.union_parents[*machine][j];
                        parents.iter().position(|&p| p == target)
                    };
                    match slot {
                        CoeffSlot::StateOwn => state.own = val,
                        CoeffSlot::StateInput(i) => state.input[*i] = val,
                        CoeffSlot::StateConst => state.constant = val,
                        CoeffSlot::StateInbox(j) => {
                            if let Some(s) = slot_of(*j) {
                                state.inbox[s] = val;
                            }
                        }
                        CoeffSlot::MsgOwn => message.own = val,
                        CoeffSlot::MsgInput(i) => message.input[*i] = val,
                        CoeffSlot::MsgConst => message.constant = val,
                        CoeffSlot::MsgInbox(j) => {
                            if let Some(s) = slot_of(*j) {
                                message.inbox[s] = val;
                            }
                        }
                    }
                }
            }
        }

        let decoded_policy = match policy {
            Some(p) => {
                let mut p = p.clone();
                let mut logits = [0.0f64; 7];
                let mut any = false;
                for (c, &value) in self.coords.iter().zip(point) {
                    if let Coord::AllocationLogit { param } = c {
                        logits[*param] = value;
                        any = true;
                    }
                }
                if any {
                    p.allocation = softmax(&logits);
                }
                Some(p)
            }
            None => None,
        };

        validate_agent(&spec)?;
        Ok((spec, decoded_policy))
    }
}

/// Numerically safe softmax onto the 7-simplex.
pub fn softmax(logits: &[f64; 7]) -> [f64; 7] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0f64; 7];
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in &mut out {
        *o /= total;
    }
    out
}

/// What a candidate policy is scored on: the discounted sum of effective
/// harvest over a fixed horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    /// Iterations per playout; at least 2, so rules that need a settled
    /// state to pay off are not mis-ranked by the first transient.
    pub horizon: u64,
    /// Per-iteration weight `discount^t`, in (0, 1].
    #[serde(default = "default_discount")]
    pub discount: f64,
    /// Plug-in ensemble size; 0 selects the exact chain.
    #[serde(default)]
    pub replicates: u64,
    #[serde(default = "default_enumeration_limit")]
    pub enumeration_limit: u64,
    pub initial: InitialCondition,
}

fn default_discount() -> f64 {
    1.0
}

fn default_enumeration_limit() -> u64 {
    1 << 20
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.horizon < 2 {
            return Err(EngineError::Config(format!(
                "objective horizon {} must be at least 2",
                self.horizon
            )));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(EngineError::Config(format!(
                "discount {} outside (0, 1]",
                self.discount
            )));
        }
        Ok(())
    }

    fn settings(&self, evolution: Option<&EvolutionPolicy>) -> SimSettings {
        SimSettings {
            iterations: self.horizon,
            harvest: if self.replicates == 0 {
                HarvestMode::Exact { enumeration_limit: self.enumeration_limit }
            } else {
                HarvestMode::Plugin { replicates: self.replicates, miller_madow: false }
            },
            gain: 1.0,
            gain_mode: Default::default(),
            depletion: None,
            population: Default::default(),
            evolution: evolution.cloned(),
        }
    }
}

/// Score one concrete (Society, Environment, policy) triple. All candidates
/// share `plan`, so comparisons use common random numbers. Runs that cannot
/// even start score negative infinity.
pub fn evaluate_policy(
    society: &AgentSpec,
    environment: &AgentSpec,
    evolution: Option<&EvolutionPolicy>,
    objective: &ObjectiveSpec,
    plan: &SeedPlan,
) -> f64 {
    let settings = objective.settings(evolution);
    match run_simulation(society, environment, &objective.initial, &settings, plan) {
        Ok(log) => log
            .rows
            .iter()
            .map(|r| objective.discount.powf(r.iteration as f64) * r.gfer_effective)
            .sum(),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// One restart's trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub start_score: f64,
    pub end_score: f64,
    pub accepted: u64,
    pub evaluations: u64,
}

/// One scored candidate, in evaluation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    /// The restart (or outer round) the candidate was evaluated in.
    pub round: u64,
    /// Evaluation index within the round; 0 is the round's starting point.
    pub candidate: u64,
    pub score: f64,
    /// Whether the candidate became the current point.
    pub accepted: bool,
}

/// Result of an inner search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub best_point: Vec<f64>,
    pub best_score: f64,
    pub evaluations: u64,
    pub restarts: Vec<RestartTrace>,
    pub history: Vec<CandidateRecord>,
}

/// Random-restart hill climbing with single-coordinate neighbors. The
/// evaluation budget is split evenly across restarts; acceptance is strict
/// improvement, so per-restart scores are monotone.
#[allow(clippy::too_many_arguments)]
pub fn inner_optimize(
    base_society: &AgentSpec,
    environment: &AgentSpec,
    evolution: Option<&EvolutionPolicy>,
    encoding: &PolicyEncoding,
    objective: &ObjectiveSpec,
    budget: u64,
    restarts: u64,
    plan: &SeedPlan,
) -> Result<OptimizeReport, EngineError> {
    objective.validate()?;
    if encoding.is_empty() {
        return Err(EngineError::Config("policy encoding has no tunable coordinates".into()));
    }
    let restarts = restarts.max(1);
    let per_restart = (budget / restarts).max(1);
    let eval = |point: &[f64]| -> f64 {
        match encoding.decode(base_society, evolution, point) {
            Ok((spec, policy)) => {
                evaluate_policy(&spec, environment, policy.as_ref(), objective, plan)
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let mut best_point: Option<Vec<f64>> = None;
    let mut best_score = f64::NEG_INFINITY;
    let mut evaluations = 0u64;
    let mut traces = Vec::with_capacity(restarts as usize);
    let mut history = Vec::new();
    for restart in 0..restarts {
        let mut rng = plan.rng_for(Purpose::Optimizer, restart, AgentTag::Society, 0, 0);
        let mut current = encoding.random_point(&mut rng);
        let mut score = eval(&current);
        evaluations += 1;
        history.push(CandidateRecord { round: restart, candidate: 0, score, accepted: true });
        let start_score = score;
        let mut accepted = 0u64;
        let mut used = 1u64;
        while used < per_restart {
            let candidate = encoding.neighbor(&current, &mut rng);
            let s = eval(&candidate);
            let improved = s > score;
            history.push(CandidateRecord {
                round: restart,
                candidate: used,
                score: s,
                accepted: improved,
            });
            used += 1;
            evaluations += 1;
            if improved {
                score = s;
                current = candidate;
                accepted += 1;
            }
        }
        if score > best_score {
            best_score = score;
            best_point = Some(current.clone());
        }
        traces.push(RestartTrace { start_score, end_score: score, accepted, evaluations: used });
    }
    Ok(OptimizeReport {
        best_point: best_point.expect("at least one restart ran"),
        best_score,
        evaluations,
        restarts: traces,
        history,
    })
}

/// A family of random environments: directed Erdos-Renyi wiring over
/// modular-linear machines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErEnvFamily {
    pub machines: usize,
    pub cardinality: u32,
    pub msg_cardinality: u32,
    /// Probability of each ordered pair edge.
    pub edge_prob: f64,
    pub tau: u32,
    pub sigma: f64,
}

impl ErEnvFamily {
    /// State shape every member of the family presents to the Society.
    pub fn state_cards(&self) -> Vec<u32> {
        vec![self.cardinality; self.machines]
    }

    /// Draw one member. `society_cards` becomes the member's input shape.
    pub fn sample(&self, society_cards: &[u32], rng: &mut ChaCha8Rng) -> AgentSpec {
        let mut edges = Vec::new();
        for u in 0..self.machines {
            for v in 0..self.machines {
                if u != v && rng.random::<f64>() < self.edge_prob {
                    edges.push((u, v));
                }
            }
        }
        let graph = MessageGraph {
            nodes: self.machines,
            edges,
            fan_out_cap: (self.machines.saturating_sub(1) as u32).max(1),
        };
        let machines = (0..self.machines)
            .map(|v| {
                let n_parents = graph.parents(v).len();
                let mut form = |modulus: u32| crate::mcm::LinForm {
                    own: rng.random_range(0..modulus.max(2)),
                    input: (0..society_cards.len())
                        .map(|_| rng.random_range(0..modulus.max(2)))
                        .collect(),
                    inbox: (0..n_parents).map(|_| rng.random_range(0..modulus.max(2))).collect(),
                    constant: rng.random_range(0..modulus.max(2)),
                };
                let state = form(self.cardinality);
                let message = form(self.msg_cardinality);
                crate::mcm::MachineSpec {
                    id: v,
                    cardinality: self.cardinality,
                    role: Role::Generic,
                    rule: Rule::LinearRing { state, message },
                }
            })
            .collect();
        AgentSpec {
            tau: self.tau,
            msg_cardinality: self.msg_cardinality,
            sigma: self.sigma,
            input_shape: society_cards.to_vec(),
            graph,
            machines,
        }
    }
}

/// One round of optimization against a sampled environment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterRound {
    pub environment: AgentSpec,
    pub report: OptimizeReport,
}

/// Optimize the Society against `rounds` independently sampled environments.
#[allow(clippy::too_many_arguments)]
pub fn outer_random(
    base_society: &AgentSpec,
    family: &ErEnvFamily,
    encoding: &PolicyEncoding,
    evolution: Option<&EvolutionPolicy>,
    objective: &ObjectiveSpec,
    rounds: u64,
    budget: u64,
    restarts: u64,
    plan: &SeedPlan,
) -> Result<Vec<OuterRound>, EngineError> {
    if base_society.input_shape != family.state_cards() {
        return Err(EngineError::ShapeMismatch {
            input: base_society.input_shape.clone(),
            partner: family.state_cards(),
        });
    }
    let society_cards = base_society.state_shape().cards().to_vec();
    let mut out = Vec::with_capacity(rounds as usize);
    for round in 0..rounds {
        let mut rng = plan.rng_for(Purpose::EnvFamily, round, AgentTag::Environment, 0, 0);
        let environment = family.sample(&society_cards, &mut rng);
        validate_agent(&environment)?;
        let report = inner_optimize(
            base_society,
            &environment,
            evolution,
            encoding,
            objective,
            budget,
            restarts,
            plan,
        )?;
        out.push(OuterRound { environment, report });
    }
    Ok(out)
}

/// How strongly an agent's next state depends on its external input:
/// the mutual information I(state after a batch; input), with the starting
/// state and the input probe both uniform, averaged over starting states.
pub fn responsiveness(agent: &AgentSpec, limit: u64) -> Result<f64, EngineError> {
    let mut prop = ExactPropagator::new(agent, limit)?;
    let state_shape = agent.state_shape();
    let in_space = agent.input_space();
    let x_total = state_shape.total().ok_or(EngineError::SpaceTooLarge {
        total: u64::MAX,
        limit,
    })?;
    let e_total = in_space.total().expect("input space overflow") as usize;
    let mut acc = 0.0;
    for x in 0..x_total {
        let mut joint = JointDist::zeros(x_total as usize, e_total);
        for (e_idx, e) in in_space.iter().enumerate() {
            let dist = prop.batch(x, &e, agent.tau);
            for &(x2, p) in dist.iter() {
                *joint.at_mut(x2, e_idx as u64) += p / e_total as f64;
            }
        }
        acc += mi_exact(&joint);
    }
    Ok(acc / x_total as f64)
}

/// Best-response alternation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialConfig {
    pub rounds: u64,
    pub society_budget: u64,
    pub environment_budget: u64,
    pub restarts: u64,
    /// Environments whose responsiveness falls below this are rejected, so
    /// the adversary cannot win by going inert.
    pub responsiveness_floor: f64,
    #[serde(default = "default_enumeration_limit")]
    pub enumeration_limit: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdversarialRound {
    /// Society's score after its move.
    pub society_score: f64,
    /// Society's score after the environment's counter-move.
    pub environment_score: f64,
    pub responsiveness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdversarialReport {
    pub rounds: Vec<AdversarialRound>,
    pub final_society: AgentSpec,
    pub final_environment: AgentSpec,
}

/// Alternate best responses: the Society maximizes its harvest, then the
/// environment minimizes it while staying at least `responsiveness_floor`
/// responsive to its input.
pub fn outer_adversarial(
    base_society: &AgentSpec,
    base_environment: &AgentSpec,
    objective: &ObjectiveSpec,
    cfg: &AdversarialConfig,
    plan: &SeedPlan,
) -> Result<AdversarialReport, EngineError> {
    objective.validate()?;
    let mut society = base_society.clone();
    let mut environment = base_environment.clone();
    let floor_ok = |env: &AgentSpec| -> Option<f64> {
        match responsiveness(env, cfg.enumeration_limit) {
            Ok(r) if r >= cfg.responsiveness_floor => Some(r),
            _ => None,
        }
    };
    let initial_resp = floor_ok(&environment).ok_or_else(|| {
        EngineError::Config(format!(
            "starting environment is below the responsiveness floor {}",
            cfg.responsiveness_floor
        ))
    })?;
    let mut rounds = Vec::with_capacity(cfg.rounds as usize);
    let mut env_resp = initial_resp;
    for round in 0..cfg.rounds {
        // Society move.
        let s_encoding = PolicyEncoding::new(&society, false, &[])?;
        let report = inner_optimize(
            &society,
            &environment,
            None,
            &s_encoding,
            objective,
            cfg.society_budget,
            cfg.restarts,
            plan,
        )?;
        let (next_society, _) = s_encoding.decode(&society, None, &report.best_point)?;
        society = next_society;
        let society_score = report.best_score;

        // Environment counter-move: hill climb its coefficients to minimize
        // the Society's score, rejecting unresponsive candidates.
        let e_encoding = PolicyEncoding::new(&environment, false, &[])?;
        if e_encoding.is_empty() {
            return Err(EngineError::Config(
                "adversarial environment has no tunable coordinates".into(),
            ));
        }
        let mut rng = plan.rng_for(Purpose::Optimizer, round, AgentTag::Environment, 0, 0);
        let mut current_point: Option<Vec<f64>> = None;
        let mut current_score = evaluate_policy(&society, &environment, None, objective, plan);
        let mut used = 1u64;
        while used < cfg.environment_budget.max(1) {
            let candidate_point = match &current_point {
                Some(p) => e_encoding.neighbor(p, &mut rng),
                None => e_encoding.random_point(&mut rng),
            };
            used += 1;
            let Ok((candidate_env, _)) = e_encoding.decode(&environment, None, &candidate_point)
            else {
                continue;
            };
            let Some(resp) = floor_ok(&candidate_env) else {
                continue;
            };
            let s = evaluate_policy(&society, &candidate_env, None, objective, plan);
            if s < current_score {
                current_score = s;
                current_point = Some(candidate_point);
                env_resp = resp;
            }
        }
        if let Some(p) = current_point {
            let (next_env, _) = e_encoding.decode(&environment, None, &p)?;
            environment = next_env;
        }
        rounds.push(AdversarialRound {
            society_score,
            environment_score: current_score,
            responsiveness: env_resp,
        });
    }
    Ok(AdversarialReport { rounds, final_society: society, final_environment: environment })
}
