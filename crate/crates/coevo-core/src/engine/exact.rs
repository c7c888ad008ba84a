//! Exact distribution propagation through an agent's batch dynamics.
//!
//! Enumerates the reachable `(states, inboxes)` configurations with their
//! probabilities instead of sampling them. Works for any mix of
//! deterministic rules, stochastic kernels, and resource stores; ledger
//! machines carry unbounded tape state and are refused. All maps are
//! ordered, so the floating-point accumulation order — and therefore every
//! output bit — is reproducible.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use crate::mcm::{self, transfer, AgentSpec, Role, RuleOutcomes};
use crate::space::Shape;

use super::{EngineError, Stepper};

/// A sparse distribution over flat configuration indices.
pub type SparseDist = BTreeMap<u64, f64>;

/// A batch outcome law: weighted flat end states, shared between memo hits.
pub type OutcomeLaw = Rc<Vec<(u64, f64)>>;

/// Exact τ-step propagator for one agent, memoized per
/// `(start states, frozen input, steps)`.
pub struct ExactPropagator<'a> {
    stepper: Stepper<'a>,
    state_shape: Shape,
    config_shape: Shape,
    n: usize,
    memo: HashMap<(u64, u64, u32), OutcomeLaw>,
}

impl<'a> ExactPropagator<'a> {
    /// Fails if the spec contains a ledger machine or the configuration
    /// space (states x inbox contents) exceeds `limit`.
    pub fn new(spec: &'a AgentSpec, limit: u64) -> Result<Self, EngineError> {
        let stepper = Stepper::new(spec);
        if stepper.has_ledger() {
            return Err(EngineError::ExactUnsupported("ledger"));
        }
        let state_shape = spec.state_shape();
        let mut cards: Vec<u32> = state_shape.cards().to_vec();
        let n = spec.n_machines();
        for v in 0..n {
            cards.extend(std::iter::repeat_n(spec.msg_cardinality, spec.graph.parents(v).len()));
        }
        let config_shape = Shape::new(cards);
        let total = config_shape
            .total()
            .ok_or(EngineError::SpaceTooLarge { total: u64::MAX, limit })?;
        if total > limit {
            return Err(EngineError::SpaceTooLarge { total, limit });
        }
        Ok(ExactPropagator { stepper, state_shape, config_shape, n, memo: HashMap::new() })
    }

    pub fn state_shape(&self) -> &Shape {
        &self.state_shape
    }

    pub fn spec(&self) -> &AgentSpec {
        self.stepper.spec()
    }

    fn config_flat(&self, states: &[u32], inboxes: &[Vec<u32>]) -> u64 {
        let mut tuple = Vec::with_capacity(self.config_shape.len());
        tuple.extend_from_slice(states);
        for inbox in inboxes {
            tuple.extend_from_slice(inbox);
        }
        self.config_shape.flatten(&tuple)
    }

    fn config_parts(&self, flat: u64) -> (Vec<u32>, Vec<Vec<u32>>) {
        let tuple = self.config_shape.unflatten(flat);
        let states = tuple[..self.n].to_vec();
        let mut inboxes = Vec::with_capacity(self.n);
        let mut cursor = self.n;
        for v in 0..self.n {
            let len = self.stepper.parents_of(v).len();
            inboxes.push(tuple[cursor..cursor + len].to_vec());
            cursor += len;
        }
        (states, inboxes)
    }

    /// Push a configuration distribution through one synchronous timestep.
    fn step_dist(&self, dist: &SparseDist, e: &[u32]) -> SparseDist {
        let spec = self.stepper.spec();
        let mut next = SparseDist::new();
        for (&config, &prob) in dist {
            let (states, inboxes) = self.config_parts(config);
            // Per-machine branch lists: (new state, outgoing message, prob).
            let branches: Vec<Vec<(u32, u32, f64)>> = (0..self.n)
                .map(|v| {
                    let machine = &spec.machines[v];
                    let outcomes = mcm::rule_outcomes(
                        spec,
                        self.stepper.input_shape_of(v),
                        v,
                        states[v],
                        e,
                        &inboxes[v],
                    );
                    let raw: Vec<(u32, u32, f64)> = match outcomes {
                        RuleOutcomes::Det(x, m) => vec![(x, m, 1.0)],
                        RuleOutcomes::Stoch(row) => {
                            row.iter().map(|o| (o.state, o.message, o.prob)).collect()
                        }
                    };
                    match machine.role {
                        Role::Generic => raw,
                        Role::ResourceStore => {
                            let received = self.stepper.received(v, &inboxes[v]);
                            raw.into_iter()
                                .map(|(_, req, p)| {
                                    let t = transfer(states[v], req, received, machine.cardinality);
                                    (t.new_balance, t.sent, p)
                                })
                                .collect()
                        }
                        Role::Ledger { .. } => unreachable!("ledgers are refused at construction"),
                    }
                })
                .collect();
            // Walk the cartesian product of branch choices with an odometer.
            let mut choice = vec![0usize; self.n];
            loop {
                let mut p_combo = prob;
                for v in 0..self.n {
                    p_combo *= branches[v][choice[v]].2;
                }
                if p_combo > 0.0 {
                    let mut new_states = Vec::with_capacity(self.n);
                    let mut messages = Vec::with_capacity(self.n);
                    for v in 0..self.n {
                        let (x, m, _) = branches[v][choice[v]];
                        new_states.push(x);
                        messages.push(m);
                    }
                    let new_inboxes: Vec<Vec<u32>> = (0..self.n)
                        .map(|v| self.stepper.parents_of(v).iter().map(|&p| messages[p]).collect())
                        .collect();
                    *next.entry(self.config_flat(&new_states, &new_inboxes)).or_insert(0.0) +=
                        p_combo;
                }
                // Advance the odometer.
                let mut v = 0;
                loop {
                    if v == self.n {
                        break;
                    }
                    choice[v] += 1;
                    if choice[v] < branches[v].len() {
                        break;
                    }
                    choice[v] = 0;
                    v += 1;
                }
                if v == self.n {
                    break;
                }
            }
        }
        next
    }

    /// Exact end-state distribution after `steps` timesteps from
    /// `(start states, zero inboxes)` under frozen input `e`, marginalized
    /// over inbox contents. Memoized.
    pub fn batch(&mut self, states_flat: u64, e: &[u32], steps: u32) -> OutcomeLaw {
        let e_flat = self.spec().input_space().flatten(if e.is_empty() { &[0] } else { e });
        let key = (states_flat, e_flat, steps);
        if let Some(hit) = self.memo.get(&key) {
            return Rc::clone(hit);
        }
        let states = self.state_shape.unflatten(states_flat);
        let inboxes: Vec<Vec<u32>> =
            (0..self.n).map(|v| vec![0; self.stepper.parents_of(v).len()]).collect();
        let mut dist = SparseDist::new();
        dist.insert(self.config_flat(&states, &inboxes), 1.0);
        for _ in 0..steps {
            dist = self.step_dist(&dist, e);
        }
        // Marginalize inboxes away: project each config onto its states.
        let mut out: SparseDist = SparseDist::new();
        for (&config, &p) in &dist {
            let (states, _) = self.config_parts(config);
            *out.entry(self.state_shape.flatten(&states)).or_insert(0.0) += p;
        }
        let result: OutcomeLaw = Rc::new(out.into_iter().collect());
        self.memo.insert(key, Rc::clone(&result));
        result
    }
}
