//! Parameter evolution: converting harvested energy into computational
//! resources through thermodynamically-motivated cost functions.
//!
//! Seven Society-side parameters are chargeable: batch length, message
//! cardinality, generic machine count, generic state cardinality, both
//! agents' observation resolutions, and the graph's fan-out cap. Each
//! iteration the effective harvest is split by a fixed allocation vector,
//! pushed through per-parameter cost inverses, floor-rounded for discrete
//! parameters, and clamped to configured bounds. A Guttman-style template
//! sequence can additionally unlock structural stages (ledgers, stores,
//! extra machines) as the harvest high-water mark crosses thresholds.
//!
//! Structural edits preserve behavior where the old and new input domains
//! overlap: lookup rules are remapped coordinate-wise (new own-states get
//! identity rows, removed inputs are projected out at zero, shrunk ranges
//! wrap), and modular-linear rules simply reinterpret their coefficients.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{AgentTag, Purpose, SeedPlan};
use crate::mcm::{
    AgentSpec, KernelOutcome, LinForm, MachineSpec, MessageGraph, Role, Rule,
};
use crate::space::Shape;

/// Index order of the chargeable parameters in allocation vectors.
pub const PARAM_NAMES: [&str; 7] = [
    "tau",
    "msg_cardinality",
    "machine_count",
    "state_cardinality",
    "society_resolution",
    "environment_resolution",
    "fan_out_cap",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamId {
    Tau,
    MsgCardinality,
    MachineCount,
    StateCardinality,
    SocietyResolution,
    EnvironmentResolution,
    FanOutCap,
}

impl ParamId {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Current values of the chargeable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputationParams {
    pub tau: u32,
    pub msg_cardinality: u32,
    /// Number of generic machines; ledgers and stores are structural and
    /// not counted here.
    pub machine_count: u32,
    /// State cardinality shared by the generic machines.
    pub state_cardinality: u32,
    pub society_resolution: f64,
    pub environment_resolution: f64,
    pub fan_out_cap: u32,
}

impl ComputationParams {
    /// Read the current parameters off a Society/Environment pair.
    pub fn from_specs(society: &AgentSpec, environment: &AgentSpec, r_max: f64) -> Self {
        let generic_cards: Vec<u32> = society
            .machines
            .iter()
            .filter(|m| matches!(m.role, Role::Generic))
            .map(|m| m.cardinality)
            .collect();
        ComputationParams {
            tau: society.tau,
            msg_cardinality: society.msg_cardinality,
            machine_count: generic_cards.len() as u32,
            state_cardinality: generic_cards.iter().copied().max().unwrap_or(1),
            society_resolution: crate::channel::resolution(society.sigma, r_max),
            environment_resolution: crate::channel::resolution(environment.sigma, r_max),
            fan_out_cap: society.graph.fan_out_cap,
        }
    }
}

/// One parameter's price curve. All families are strictly increasing from
/// `C(0) = 0`, so the inverse is well defined on the achievable range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostFn {
    /// `C(z) = z`.
    Identity,
    /// `C(z) = z^alpha`, `alpha` in (0, 1]: early units cost more.
    Power { alpha: f64 },
    /// `C(z) = ceiling * (2 / (1 + exp(-z / scale)) - 1)`: total spend is
    /// bounded by `ceiling`, so parameters saturate.
    Logit { scale: f64, ceiling: f64 },
}

impl CostFn {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        match *self {
            CostFn::Identity => Ok(()),
            CostFn::Power { alpha } => {
                if alpha > 0.0 && alpha <= 1.0 {
                    Ok(())
                } else {
                    Err(EvolutionError::BadCost(format!("power alpha {alpha} outside (0, 1]")))
                }
            }
            CostFn::Logit { scale, ceiling } => {
                if scale > 0.0 && ceiling > 0.0 {
                    Ok(())
                } else {
                    Err(EvolutionError::BadCost(format!(
                        "logit scale {scale} and ceiling {ceiling} must be positive"
                    )))
                }
            }
        }
    }

    /// Energy cost of holding parameter value `z >= 0`.
    pub fn cost(&self, z: f64) -> f64 {
        debug_assert!(z >= 0.0);
        match *self {
            CostFn::Identity => z,
            CostFn::Power { alpha } => z.powf(alpha),
            CostFn::Logit { scale, ceiling } => {
                ceiling * (2.0 / (1.0 + (-z / scale).exp()) - 1.0)
            }
        }
    }

    /// Inverse of [`CostFn::cost`]. Spending at or beyond a logit ceiling
    /// buys an unbounded parameter — reported as infinity and clamped later.
    pub fn invert(&self, c: f64) -> f64 {
        debug_assert!(c >= 0.0);
        match *self {
            CostFn::Identity => c,
            CostFn::Power { alpha } => c.powf(1.0 / alpha),
            CostFn::Logit { scale, ceiling } => {
                if c >= ceiling {
                    f64::INFINITY
                } else {
                    scale * ((ceiling + c) / (ceiling - c)).ln()
                }
            }
        }
    }
}

/// Per-parameter cost functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub tau: CostFn,
    pub msg_cardinality: CostFn,
    pub machine_count: CostFn,
    pub state_cardinality: CostFn,
    pub society_resolution: CostFn,
    pub environment_resolution: CostFn,
    pub fan_out_cap: CostFn,
}

impl CostTable {
    pub fn uniform(f: CostFn) -> Self {
        CostTable {
            tau: f.clone(),
            msg_cardinality: f.clone(),
            machine_count: f.clone(),
            state_cardinality: f.clone(),
            society_resolution: f.clone(),
            environment_resolution: f.clone(),
            fan_out_cap: f,
        }
    }

    pub fn as_array(&self) -> [&CostFn; 7] {
        [
            &self.tau,
            &self.msg_cardinality,
            &self.machine_count,
            &self.state_cardinality,
            &self.society_resolution,
            &self.environment_resolution,
            &self.fan_out_cap,
        ]
    }
}

impl Default for CostTable {
    fn default() -> Self {
        CostTable::uniform(CostFn::Identity)
    }
}

/// Closed interval a parameter may occupy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub floor: f64,
    pub ceiling: f64,
}

impl Bounds {
    pub fn new(floor: f64, ceiling: f64) -> Self {
        Bounds { floor, ceiling }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub tau: Bounds,
    pub msg_cardinality: Bounds,
    pub machine_count: Bounds,
    pub state_cardinality: Bounds,
    pub society_resolution: Bounds,
    pub environment_resolution: Bounds,
    pub fan_out_cap: Bounds,
}

impl ParamBounds {
    pub fn as_array(&self) -> [Bounds; 7] {
        [
            self.tau,
            self.msg_cardinality,
            self.machine_count,
            self.state_cardinality,
            self.society_resolution,
            self.environment_resolution,
            self.fan_out_cap,
        ]
    }

    pub fn as_array_mut(&mut self) -> [&mut Bounds; 7] {
        [
            &mut self.tau,
            &mut self.msg_cardinality,
            &mut self.machine_count,
            &mut self.state_cardinality,
            &mut self.society_resolution,
            &mut self.environment_resolution,
            &mut self.fan_out_cap,
        ]
    }
}

impl Default for ParamBounds {
    fn default() -> Self {
        // Desk-scale defaults: every discrete parameter keeps at least one
        // unit of structure; resolutions stay in [1, 1e6] so sigma = 1/r
        // stays within [0, 1].
        ParamBounds {
            tau: Bounds::new(1.0, 500.0),
            msg_cardinality: Bounds::new(1.0, 256.0),
            machine_count: Bounds::new(1.0, 64.0),
            state_cardinality: Bounds::new(1.0, 256.0),
            society_resolution: Bounds::new(1.0, 1e6),
            environment_resolution: Bounds::new(1.0, 1e6),
            fan_out_cap: Bounds::new(1.0, 32.0),
        }
    }
}

/// A structural stage unlocked when the harvest high-water mark crosses its
/// threshold. Stages unlock strictly in sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuttmanStage {
    pub name: String,
    pub threshold: f64,
    pub template: GuttmanTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GuttmanTemplate {
    /// Append a ledger wired bidirectionally to machine 0.
    AddLedger { addr_range: u32, symbol_range: u32, cardinality: u32 },
    /// Append a resource store seeded with an initial balance.
    AddStore { cardinality: u32, initial: u32 },
    /// Permanently raise the target count of generic machines.
    AddMachines { count: u32 },
    /// Raise a parameter's floor so it can no longer decay below it.
    RaiseFloor { param: ParamId, value: f64 },
}

/// How new generic machines are wired in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthPolicy {
    /// Random edges attached per new machine (either direction), subject to
    /// the fan-out cap.
    pub attach_edges: u32,
}

impl Default for GrowthPolicy {
    fn default() -> Self {
        GrowthPolicy { attach_edges: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RhoSchedule {
    /// One allocation vector for the whole run.
    #[default]
    Fixed,
    /// The allocation block is re-tuned before each iteration during
    /// optimizing playouts.
    PerIteration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionPolicy {
    /// Allocation over the seven chargeable parameters; must sum to one.
    pub allocation: [f64; 7],
    /// Conversion efficiency from harvested bits to spendable energy.
    pub kappa: f64,
    pub costs: CostTable,
    pub bounds: ParamBounds,
    pub growth: GrowthPolicy,
    #[serde(default)]
    pub guttman: Vec<GuttmanStage>,
    #[serde(default)]
    pub rho_schedule: RhoSchedule,
}

impl EvolutionPolicy {
    /// Even allocation, identity costs, default bounds.
    pub fn balanced() -> Self {
        EvolutionPolicy {
            allocation: [1.0 / 7.0; 7],
            kappa: 1.0,
            costs: CostTable::default(),
            bounds: ParamBounds::default(),
            growth: GrowthPolicy::default(),
            guttman: Vec::new(),
            rho_schedule: RhoSchedule::Fixed,
        }
    }

    pub fn validate(&self) -> Result<(), EvolutionError> {
        if self.allocation.iter().any(|&a| a.is_nan() || a < 0.0) {
            return Err(EvolutionError::BadAllocation("negative or NaN entry".into()));
        }
        let total: f64 = self.allocation.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(EvolutionError::BadAllocation(format!("sums to {total}, not 1")));
        }
        if self.kappa.is_nan() || self.kappa <= 0.0 {
            return Err(EvolutionError::BadCost(format!("kappa {} must be positive", self.kappa)));
        }
        for c in self.costs.as_array() {
            c.validate()?;
        }
        for (i, b) in self.bounds.as_array().iter().enumerate() {
            if b.floor.is_nan() || b.ceiling.is_nan() || b.floor < 1.0 || b.ceiling < b.floor {
                return Err(EvolutionError::BadBounds {
                    param: PARAM_NAMES[i],
                    floor: b.floor,
                    ceiling: b.ceiling,
                });
            }
        }
        let mut last = f64::NEG_INFINITY;
        for stage in &self.guttman {
            if stage.threshold < last {
                return Err(EvolutionError::BadGuttman(stage.name.clone()));
            }
            last = stage.threshold;
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvolutionError {
    #[error("bad allocation vector: {0}")]
    BadAllocation(String),
    #[error("bad cost function: {0}")]
    BadCost(String),
    #[error("bad bounds for {param}: floor {floor}, ceiling {ceiling}")]
    BadBounds { param: &'static str, floor: f64, ceiling: f64 },
    #[error("guttman stage '{0}' breaks the non-decreasing threshold order")]
    BadGuttman(String),
}

/// Energy accounting for one evolution step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    /// `rho_i * kappa * gfer`: energy earmarked per parameter.
    pub allocated: [f64; 7],
    /// Cost-inverse images before rounding and clamping; pushes back through
    /// the cost functions to exactly the allocated energy.
    pub raw: [f64; 7],
    /// Final parameter values after floor-rounding and bound clamping.
    pub params: ComputationParams,
    /// Energy actually embodied in the final values.
    pub costs_paid: [f64; 7],
    /// Allocated minus paid. Positive energy is discarded by rounding and
    /// ceilings; a negative value means floors are subsidizing structure the
    /// harvest cannot pay for.
    pub discarded: f64,
    pub clamped: [bool; 7],
}

fn clamp_discrete(raw: f64, b: Bounds) -> (u32, bool) {
    let floor = b.floor.round().max(1.0);
    let ceiling = b.ceiling.floor().max(floor);
    if raw.is_infinite() {
        return (ceiling as u32, true);
    }
    let v = raw.floor();
    if v < floor {
        (floor as u32, true)
    } else if v > ceiling {
        (ceiling as u32, true)
    } else {
        (v as u32, false)
    }
}

fn clamp_continuous(raw: f64, b: Bounds) -> (f64, bool) {
    if raw.is_infinite() || raw > b.ceiling {
        (b.ceiling, true)
    } else if raw < b.floor {
        (b.floor, true)
    } else {
        (raw, false)
    }
}

/// Map one iteration's effective harvest to new parameter values.
pub fn evolve_parameters(policy: &EvolutionPolicy, gfer_effective: f64) -> AllocationReport {
    debug_assert!(gfer_effective >= 0.0);
    let budget = policy.kappa * gfer_effective;
    let costs = policy.costs.as_array();
    let bounds = policy.bounds.as_array();
    let mut allocated = [0.0; 7];
    let mut raw = [0.0; 7];
    for i in 0..7 {
        allocated[i] = policy.allocation[i] * budget;
        raw[i] = costs[i].invert(allocated[i]);
    }
    let mut clamped = [false; 7];
    let (tau, c0) = clamp_discrete(raw[0], bounds[0]);
    let (msg, c1) = clamp_discrete(raw[1], bounds[1]);
    let (count, c2) = clamp_discrete(raw[2], bounds[2]);
    let (card, c3) = clamp_discrete(raw[3], bounds[3]);
    let (r_s, c4) = clamp_continuous(raw[4], bounds[4]);
    let (r_e, c5) = clamp_continuous(raw[5], bounds[5]);
    let (fan, c6) = clamp_discrete(raw[6], bounds[6]);
    clamped.copy_from_slice(&[c0, c1, c2, c3, c4, c5, c6]);
    let params = ComputationParams {
        tau,
        msg_cardinality: msg,
        machine_count: count,
        state_cardinality: card,
        society_resolution: r_s,
        environment_resolution: r_e,
        fan_out_cap: fan,
    };
    let finals = [
        tau as f64,
        msg as f64,
        count as f64,
        card as f64,
        r_s,
        r_e,
        fan as f64,
    ];
    let mut costs_paid = [0.0; 7];
    for i in 0..7 {
        costs_paid[i] = costs[i].cost(finals[i]);
    }
    let discarded = allocated.iter().sum::<f64>() - costs_paid.iter().sum::<f64>();
    AllocationReport { allocated, raw, params, costs_paid, discarded, clamped }
}

// ---------------------------------------------------------------------------
// Structural edits.

/// Coordinate remapping between an old and a new rule input domain.
struct RuleAdaptation {
    old_own_card: u32,
    new_own_card: u32,
    old_msg: u32,
    new_msg: u32,
    old_input: Vec<u32>,
    new_input: Vec<u32>,
    /// Per new external-input coordinate: the old coordinate it came from.
    input_map: Vec<Option<usize>>,
    /// Per new inbox slot: the old slot it came from.
    inbox_map: Vec<Option<usize>>,
    old_slots: usize,
}

impl RuleAdaptation {
    fn old_shape(&self) -> Shape {
        let mut cards = vec![self.old_own_card];
        cards.extend_from_slice(&self.old_input);
        cards.extend(std::iter::repeat_n(self.old_msg, self.old_slots));
        Shape::new(cards)
    }

    fn new_shape(&self) -> Shape {
        let mut cards = vec![self.new_own_card];
        cards.extend_from_slice(&self.new_input);
        cards.extend(std::iter::repeat_n(self.new_msg, self.inbox_map.len()));
        Shape::new(cards)
    }

    /// Old flat row index for a new input tuple whose own-state coordinate
    /// is within the old range. Unmapped old coordinates read zero; mapped
    /// values wrap into the old ranges.
    fn old_row(&self, new_tuple: &[u32]) -> usize {
        let mut old_tuple = vec![0u32; 1 + self.old_input.len() + self.old_slots];
        old_tuple[0] = new_tuple[0] % self.old_own_card;
        for (i, &src) in self.input_map.iter().enumerate() {
            if let Some(j) = src {
                old_tuple[1 + j] = new_tuple[1 + i] % self.old_input[j];
            }
        }
        let new_inputs = self.input_map.len();
        for (i, &src) in self.inbox_map.iter().enumerate() {
            if let Some(j) = src {
                old_tuple[1 + self.old_input.len() + j] = new_tuple[1 + new_inputs + i] % self.old_msg;
            }
        }
        self.old_shape().flatten(&old_tuple) as usize
    }

    fn apply(&self, rule: &Rule) -> Rule {
        match rule {
            Rule::LinearRing { state, message } => {
                let remap = |form: &LinForm| LinForm {
                    own: form.own,
                    input: self
                        .input_map
                        .iter()
                        .map(|src| src.map(|j| form.input[j]).unwrap_or(0))
                        .collect(),
                    inbox: self
                        .inbox_map
                        .iter()
                        .map(|src| src.map(|j| form.inbox[j]).unwrap_or(0))
                        .collect(),
                    constant: form.constant,
                };
                Rule::LinearRing { state: remap(state), message: remap(message) }
            }
            Rule::Table { entries } => {
                let new_shape = self.new_shape();
                let new_entries = new_shape
                    .iter()
                    .map(|t| {
                        if t[0] >= self.old_own_card {
                            (t[0], 0)
                        } else {
                            let (x, m) = entries[self.old_row(&t)];
                            (x % self.new_own_card, m % self.new_msg)
                        }
                    })
                    .collect();
                Rule::Table { entries: new_entries }
            }
            Rule::Kernel { rows } => {
                let new_shape = self.new_shape();
                let new_rows = new_shape
                    .iter()
                    .map(|t| {
                        if t[0] >= self.old_own_card {
                            vec![KernelOutcome { state: t[0], message: 0, prob: 1.0 }]
                        } else {
                            rows[self.old_row(&t)]
                                .iter()
                                .map(|o| KernelOutcome {
                                    state: o.state % self.new_own_card,
                                    message: o.message % self.new_msg,
                                    prob: o.prob,
                                })
                                .collect()
                        }
                    })
                    .collect();
                Rule::Kernel { rows: new_rows }
            }
        }
    }
}

/// Identity coordinate maps of the given lengths.
fn identity_map(len: usize) -> Vec<Option<usize>> {
    (0..len).map(Some).collect()
}

/// Resize message cardinality and generic state cardinalities in place,
/// remapping every rule onto the new domain.
fn resize_cards(spec: &AgentSpec, new_msg: u32, new_generic_card: u32) -> AgentSpec {
    let mut out = spec.clone();
    out.msg_cardinality = new_msg;
    for m in &mut out.machines {
        if matches!(m.role, Role::Generic) {
            m.cardinality = new_generic_card;
        }
    }
    for v in 0..spec.n_machines() {
        let old_card = spec.machines[v].cardinality;
        let new_card = out.machines[v].cardinality;
        let slots = spec.graph.parents(v).len();
        let adapt = RuleAdaptation {
            old_own_card: old_card,
            new_own_card: new_card,
            old_msg: spec.msg_cardinality,
            new_msg,
            old_input: spec.input_shape.clone(),
            new_input: spec.input_shape.clone(),
            input_map: identity_map(spec.input_shape.len()),
            inbox_map: identity_map(slots),
            old_slots: slots,
        };
        out.machines[v].rule = adapt.apply(&spec.machines[v].rule);
    }
    out
}

/// Rebuild rules after a graph change. `id_map[old] = Some(new)` for
/// surviving machines; rules are looked up through the inverse mapping.
fn adapt_to_graph(old: &AgentSpec, new_graph: MessageGraph, id_map: &[Option<usize>]) -> AgentSpec {
    let survivors: Vec<usize> = (0..old.n_machines()).filter(|&v| id_map[v].is_some()).collect();
    let mut new_of_old = vec![usize::MAX; old.n_machines()];
    for &v in &survivors {
        new_of_old[v] = id_map[v].unwrap();
    }
    let mut machines = Vec::with_capacity(survivors.len());
    for &v in &survivors {
        let new_id = new_of_old[v];
        let old_parents = old.graph.parents(v);
        let new_parents = new_graph.parents(new_id);
        let inbox_map: Vec<Option<usize>> = new_parents
            .iter()
            .map(|&np| {
                // Which old machine does this new parent correspond to?
                let old_parent = (0..old.n_machines()).find(|&ov| new_of_old[ov] == np)?;
                old_parents.iter().position(|&p| p == old_parent)
            })
            .collect();
        let adapt = RuleAdaptation {
            old_own_card: old.machines[v].cardinality,
            new_own_card: old.machines[v].cardinality,
            old_msg: old.msg_cardinality,
            new_msg: old.msg_cardinality,
            old_input: old.input_shape.clone(),
            new_input: old.input_shape.clone(),
            input_map: identity_map(old.input_shape.len()),
            inbox_map,
            old_slots: old_parents.len(),
        };
        machines.push(MachineSpec {
            id: new_id,
            cardinality: old.machines[v].cardinality,
            role: old.machines[v].role.clone(),
            rule: adapt.apply(&old.machines[v].rule),
        });
    }
    machines.sort_by_key(|m| m.id);
    AgentSpec {
        tau: old.tau,
        msg_cardinality: old.msg_cardinality,
        sigma: old.sigma,
        input_shape: old.input_shape.clone(),
        graph: new_graph,
        machines,
    }
}

/// Where each machine of an evolved spec came from, for runtime-state
/// reconciliation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateOrigin {
    /// Survives from the old spec at this index; its value wraps modulo the
    /// new cardinality.
    Kept(usize),
    /// Newly created with this initial state.
    Fresh(u32),
}

/// A fully applied evolution step.
#[derive(Debug, Clone)]
pub struct EvolutionStep {
    pub report: AllocationReport,
    pub society: AgentSpec,
    pub environment: AgentSpec,
    /// Per new-society-machine provenance.
    pub state_map: Vec<StateOrigin>,
    /// Names of Guttman stages newly unlocked this step.
    pub unlocked: Vec<String>,
}

/// Evolution state carried across iterations: the (possibly floor-raised)
/// policy, the harvest high-water mark, and the Guttman cursor.
#[derive(Debug, Clone)]
pub struct EvolutionEngine {
    pub policy: EvolutionPolicy,
    pub high_water: f64,
    pub unlocked: usize,
    /// Extra generic machines granted by AddMachines templates.
    bonus_machines: u32,
    /// Structural templates waiting to be instantiated.
    pending_templates: Vec<GuttmanTemplate>,
}

impl EvolutionEngine {
    pub fn new(policy: EvolutionPolicy) -> Result<Self, EvolutionError> {
        policy.validate()?;
        Ok(EvolutionEngine {
            policy,
            high_water: f64::NEG_INFINITY,
            unlocked: 0,
            bonus_machines: 0,
            pending_templates: Vec::new(),
        })
    }

    /// Unlock any stages whose thresholds the high-water mark has crossed,
    /// strictly in sequence. Returns newly unlocked names.
    fn advance_guttman(&mut self, gfer_effective: f64) -> Vec<String> {
        self.high_water = self.high_water.max(gfer_effective);
        let mut names = Vec::new();
        while self.unlocked < self.policy.guttman.len()
            && self.high_water >= self.policy.guttman[self.unlocked].threshold
        {
            let stage = self.policy.guttman[self.unlocked].clone();
            match stage.template {
                GuttmanTemplate::AddMachines { count } => self.bonus_machines += count,
                GuttmanTemplate::RaiseFloor { param, value } => {
                    self.policy.bounds.as_array_mut()[param.index()].floor = value;
                }
                ref t @ (GuttmanTemplate::AddLedger { .. } | GuttmanTemplate::AddStore { .. }) => {
                    self.pending_templates.push(t.clone());
                }
            }
            names.push(stage.name);
            self.unlocked += 1;
        }
        names
    }

    /// One full evolution step: allocate the harvest, rebuild the Society
    /// spec, and update the Environment's resolution and input shape.
    /// Nothing on the Environment side changes except `sigma` (and the input
    /// shape it is forced to track when the Society resizes).
    pub fn step(
        &mut self,
        society: &AgentSpec,
        environment: &AgentSpec,
        gfer_effective: f64,
        plan: &SeedPlan,
        iteration: u64,
    ) -> EvolutionStep {
        let unlocked = self.advance_guttman(gfer_effective);
        let mut report = evolve_parameters(&self.policy, gfer_effective);
        if self.bonus_machines > 0 {
            report.params.machine_count = (report.params.machine_count + self.bonus_machines)
                .min(self.policy.bounds.machine_count.ceiling as u32);
        }
        let params = report.params;

        // Pass 1: cardinalities.
        let mut soc = resize_cards(society, params.msg_cardinality, params.state_cardinality);
        let mut state_map: Vec<StateOrigin> = (0..soc.n_machines()).map(StateOrigin::Kept).collect();

        // Pass 2: generic machine count.
        let generic_ids: Vec<usize> = soc
            .machines
            .iter()
            .filter(|m| matches!(m.role, Role::Generic))
            .map(|m| m.id)
            .collect();
        let target = params.machine_count as usize;
        if generic_ids.len() > target {
            let drop: std::collections::HashSet<usize> =
                generic_ids[target..].iter().copied().collect();
            let mut id_map = vec![None; soc.n_machines()];
            let mut next = 0;
            for (v, slot) in id_map.iter_mut().enumerate() {
                if !drop.contains(&v) {
                    *slot = Some(next);
                    next += 1;
                }
            }
            let new_graph = MessageGraph {
                nodes: next,
                edges: soc
                    .graph
                    .edges
                    .iter()
                    .filter_map(|&(u, w)| Some((id_map[u]?, id_map[w]?)))
                    .collect(),
                fan_out_cap: soc.graph.fan_out_cap,
            };
            state_map = (0..soc.n_machines())
                .filter(|&v| id_map[v].is_some())
                .map(|v| state_map[v].clone())
                .collect();
            soc = adapt_to_graph(&soc, new_graph, &id_map);
        } else if generic_ids.len() < target {
            let grow_by = target - generic_ids.len();
            let mut rng = plan.rng_for(Purpose::Growth, iteration, AgentTag::Society, 0, 0);
            let (grown, fresh) = grow_machines(&soc, grow_by, params.state_cardinality, self.policy.growth, &mut rng);
            soc = grown;
            state_map.extend(fresh.into_iter().map(StateOrigin::Fresh));
        }

        // Pass 3: fan-out cap, pruning highest-target edges of offenders.
        soc = apply_fan_out_cap(&soc, params.fan_out_cap);

        // Pass 4: structural templates.
        for template in self.pending_templates.drain(..) {
            match template {
                GuttmanTemplate::AddLedger { addr_range, symbol_range, cardinality } => {
                    let (next, initial) = append_ledger(&soc, addr_range, symbol_range, cardinality);
                    soc = next;
                    state_map.push(StateOrigin::Fresh(initial));
                }
                GuttmanTemplate::AddStore { cardinality, initial } => {
                    let next = append_store(&soc, cardinality);
                    soc = next;
                    state_map.push(StateOrigin::Fresh(initial));
                }
                _ => unreachable!("only structural templates are queued"),
            }
        }

        // Pass 5: scalar parameters.
        soc.tau = params.tau;
        soc.sigma = 1.0 / params.society_resolution;

        // Environment: resolution plus the forced input-shape mirror.
        let mut env = environment.clone();
        env.sigma = 1.0 / params.environment_resolution;
        let new_soc_cards = soc.state_shape().cards().to_vec();
        if env.input_shape != new_soc_cards {
            let input_map: Vec<Option<usize>> = (0..new_soc_cards.len())
                .map(|i| if i < env.input_shape.len() { Some(i) } else { None })
                .collect();
            for v in 0..env.n_machines() {
                let slots = env.graph.parents(v).len();
                let adapt = RuleAdaptation {
                    old_own_card: env.machines[v].cardinality,
                    new_own_card: env.machines[v].cardinality,
                    old_msg: env.msg_cardinality,
                    new_msg: env.msg_cardinality,
                    old_input: env.input_shape.clone(),
                    new_input: new_soc_cards.clone(),
                    input_map: input_map.clone(),
                    inbox_map: identity_map(slots),
                    old_slots: slots,
                };
                env.machines[v].rule = adapt.apply(&env.machines[v].rule);
            }
            env.input_shape = new_soc_cards;
        }
        // The Society's view of the Environment is unchanged by evolution.
        soc.input_shape = environment.state_shape().cards().to_vec();

        EvolutionStep { report, society: soc, environment: env, state_map, unlocked }
    }
}

/// Append `grow_by` generic machines with random modular-linear rules and
/// random attachments. Returns the grown spec and the new machines' initial
/// states (zeros).
fn grow_machines<R: Rng>(
    spec: &AgentSpec,
    grow_by: usize,
    card: u32,
    growth: GrowthPolicy,
    rng: &mut R,
) -> (AgentSpec, Vec<u32>) {
    let mut graph = spec.graph.clone();
    let first_new = spec.n_machines();
    graph.nodes += grow_by;
    for nv in first_new..first_new + grow_by {
        for _ in 0..growth.attach_edges {
            if nv == 0 {
                break;
            }
            let peer = rng.random_range(0..nv);
            let outward = rng.random_range(0..2u32) == 0;
            let candidates = if outward { [(nv, peer), (peer, nv)] } else { [(peer, nv), (nv, peer)] };
            for (u, w) in candidates {
                let dup = graph.edges.contains(&(u, w));
                let capped = graph.out_degree(u) >= graph.fan_out_cap as usize;
                if !dup && !capped {
                    graph.edges.push((u, w));
                    break;
                }
            }
        }
    }
    // Existing machines adapt to any parents they gained.
    let id_map: Vec<Option<usize>> = (0..spec.n_machines()).map(Some).collect();
    let mut out = adapt_to_graph(spec, graph, &id_map);
    let input_len = spec.input_shape.len();
    for nv in first_new..first_new + grow_by {
        let n_parents = out.graph.parents(nv).len();
        let rand_form = |rng: &mut R, modulus: u32| LinForm {
            own: rng.random_range(0..modulus.max(2)),
            input: (0..input_len).map(|_| rng.random_range(0..modulus.max(2))).collect(),
            inbox: (0..n_parents).map(|_| rng.random_range(0..modulus.max(2))).collect(),
            constant: rng.random_range(0..modulus.max(2)),
        };
        let state = rand_form(rng, card);
        let message = rand_form(rng, out.msg_cardinality);
        out.machines.push(MachineSpec {
            id: nv,
            cardinality: card,
            role: Role::Generic,
            rule: Rule::LinearRing { state, message },
        });
    }
    (out, vec![0; grow_by])
}

/// Lower the fan-out cap, pruning each offender's highest-index out-edges.
fn apply_fan_out_cap(spec: &AgentSpec, cap: u32) -> AgentSpec {
    let mut graph = spec.graph.clone();
    graph.fan_out_cap = cap;
    for v in 0..graph.nodes {
        let mut outs: Vec<usize> = graph
            .edges
            .iter()
            .enumerate()
            .filter(|&(_, &(u, _))| u == v)
            .map(|(i, _)| i)
            .collect();
        if outs.len() > cap as usize {
            // Drop the edges with the highest target index first.
            outs.sort_by_key(|&i| graph.edges[i].1);
            let excess: Vec<usize> = outs[cap as usize..].to_vec();
            let mut keep: Vec<(usize, usize)> = Vec::with_capacity(graph.edges.len());
            for (i, &e) in graph.edges.iter().enumerate() {
                if !excess.contains(&i) {
                    keep.push(e);
                }
            }
            graph.edges = keep;
        }
    }
    if graph.edges == spec.graph.edges && cap == spec.graph.fan_out_cap {
        return spec.clone();
    }
    let id_map: Vec<Option<usize>> = (0..spec.n_machines()).map(Some).collect();
    let mut out = adapt_to_graph(spec, graph, &id_map);
    out.graph.fan_out_cap = cap;
    out
}

/// Append a ledger wired bidirectionally to machine 0.
fn append_ledger(
    spec: &AgentSpec,
    addr_range: u32,
    symbol_range: u32,
    cardinality: u32,
) -> (AgentSpec, u32) {
    let mut graph = spec.graph.clone();
    let id = graph.nodes;
    graph.nodes += 1;
    if id > 0 {
        if graph.out_degree(0) < graph.fan_out_cap as usize {
            graph.edges.push((0, id));
        }
        graph.edges.push((id, 0));
    }
    let id_map: Vec<Option<usize>> = (0..spec.n_machines()).map(Some).collect();
    let mut out = adapt_to_graph(spec, graph, &id_map);
    let n_parents = out.graph.parents(id).len();
    out.machines.push(MachineSpec {
        id,
        cardinality,
        role: Role::Ledger { addr_range, symbol_range },
        rule: Rule::LinearRing {
            state: LinForm::zero(spec.input_shape.len(), n_parents),
            message: LinForm::zero(spec.input_shape.len(), n_parents),
        },
    });
    (out, 0)
}

/// Append an unwired resource store (a sink the simulation can seed).
fn append_store(spec: &AgentSpec, cardinality: u32) -> AgentSpec {
    let mut graph = spec.graph.clone();
    let id = graph.nodes;
    graph.nodes += 1;
    let id_map: Vec<Option<usize>> = (0..spec.n_machines()).map(Some).collect();
    let mut out = adapt_to_graph(spec, graph, &id_map);
    out.machines.push(MachineSpec {
        id,
        cardinality,
        role: Role::ResourceStore,
        rule: Rule::LinearRing {
            state: LinForm::zero(spec.input_shape.len(), 0),
            message: LinForm::zero(spec.input_shape.len(), 0),
        },
    });
    out
}
