//! Synchronous heat-bath (Glauber) dynamics for Ising spins.
//!
//! Spins live in {0, 1} and are read as s = 2x - 1. Every step, each site
//! resamples from its local field b = h + J * sum of neighbor spins:
//! P(x' = 1) = 1 / (1 + exp(-2 beta b)). Neighbor spins arrive as messages,
//! so inboxes must be seeded with the initial states.

use crate::mcm::{AgentSpec, KernelOutcome, MachineSpec, MessageGraph, Role, Rule, ValidationError};
use crate::space::Shape;

/// Model parameters for one Glauber system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlauberParams {
    /// Inverse temperature; 0 means fair coin flips.
    pub beta: f64,
    /// External field applied to every site.
    pub h: f64,
    /// Coupling to each neighbor.
    pub j: f64,
}

/// Probability that a site with total field `b` resamples to spin up.
pub fn heat_bath_up(beta: f64, b: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * beta * b).exp())
}

/// Build a Glauber agent on an arbitrary undirected interaction graph,
/// given as neighbor pairs `(u, v)` (each pair wires both directions).
pub fn glauber_agent(
    p: GlauberParams,
    sites: usize,
    pairs: &[(usize, usize)],
) -> Result<AgentSpec, ValidationError> {
    let mut edges = Vec::with_capacity(2 * pairs.len());
    for &(u, v) in pairs {
        edges.push((u, v));
        edges.push((v, u));
    }
    let cap = (0..sites).map(|v| edges.iter().filter(|&&(s, _)| s == v).count()).max().unwrap_or(0);
    let graph = MessageGraph { nodes: sites, edges, fan_out_cap: (cap as u32).max(1) };
    let machines = (0..sites)
        .map(|v| {
            let degree = graph.parents(v).len();
            let mut cards = vec![2u32];
            cards.extend(std::iter::repeat_n(2, degree));
            let rows = Shape::new(cards)
                .iter()
                .map(|t| {
                    let neighbor_spin_sum: f64 =
                        t[1..].iter().map(|&m| 2.0 * m as f64 - 1.0).sum();
                    let b = p.h + p.j * neighbor_spin_sum;
                    let up = heat_bath_up(p.beta, b);
                    vec![
                        KernelOutcome { state: 0, message: 0, prob: 1.0 - up },
                        KernelOutcome { state: 1, message: 1, prob: up },
                    ]
                })
                .collect();
            MachineSpec { id: v, cardinality: 2, role: Role::Generic, rule: Rule::Kernel { rows } }
        })
        .collect();
    let spec = AgentSpec {
        tau: 1,
        msg_cardinality: 2,
        sigma: 0.0,
        input_shape: vec![],
        graph,
        machines,
    };
    crate::mcm::validate_agent(&spec)?;
    Ok(spec)
}

/// A ring of `sites` spins.
pub fn glauber_ring(p: GlauberParams, sites: usize) -> Result<AgentSpec, ValidationError> {
    assert!(sites >= 3, "a ring needs at least 3 sites");
    let pairs: Vec<(usize, usize)> = (0..sites).map(|i| (i, (i + 1) % sites)).collect();
    glauber_agent(p, sites, &pairs)
}

/// Exact single-site stationary magnetization: an isolated spin resamples
/// independently each step, so E[s] = tanh(beta * h).
pub fn single_site_magnetization(beta: f64, h: f64) -> f64 {
    (beta * h).tanh()
}

/// Exact 4x4 synchronous transition matrix for two coupled spins, indexed by
/// flat state 2*x1 + x0. Ground truth for differential tests.
pub fn two_spin_transition_matrix(p: GlauberParams) -> [[f64; 4]; 4] {
    let mut t = [[0.0; 4]; 4];
    for from in 0..4u32 {
        let x0 = from & 1;
        let x1 = (from >> 1) & 1;
        let s0 = 2.0 * x0 as f64 - 1.0;
        let s1 = 2.0 * x1 as f64 - 1.0;
        let up0 = heat_bath_up(p.beta, p.h + p.j * s1);
        let up1 = heat_bath_up(p.beta, p.h + p.j * s0);
        for to in 0..4u32 {
            let y0 = to & 1;
            let y1 = (to >> 1) & 1;
            let p0 = if y0 == 1 { up0 } else { 1.0 - up0 };
            let p1 = if y1 == 1 { up1 } else { 1.0 - up1 };
            t[from as usize][to as usize] = p0 * p1;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{seed_inboxes_with_parent_states, AgentState, Stepper};
    use crate::engine::exact::ExactPropagator;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_site_relaxes_to_tanh_beta_h() {
        for &(beta, h) in &[(0.5, 1.0), (1.0, 0.3), (2.0, -0.5)] {
            let spec = glauber_agent(GlauberParams { beta, h, j: 0.0 }, 1, &[]).unwrap();
            let stepper = Stepper::new(&spec);
            let mut state = AgentState::new(&spec);
            let mut rngs = vec![ChaCha8Rng::seed_from_u64((beta * 100.0 + h) as u64)];
            let steps = 100_000;
            let mut spin_sum = 0i64;
            for _ in 0..steps {
                stepper.step(&mut state, &[], &mut rngs);
                spin_sum += 2 * state.states[0] as i64 - 1;
            }
            let m = spin_sum as f64 / steps as f64;
            assert_abs_diff_eq!(m, single_site_magnetization(beta, h), epsilon = 0.02);
        }
    }

    #[test]
    fn infinite_temperature_is_a_fair_coin() {
        let spec = glauber_agent(GlauberParams { beta: 0.0, h: 3.0, j: 1.0 }, 1, &[]).unwrap();
        let stepper = Stepper::new(&spec);
        let mut state = AgentState::new(&spec);
        let mut rngs = vec![ChaCha8Rng::seed_from_u64(9)];
        let steps = 100_000;
        let ups: u32 = (0..steps)
            .map(|_| {
                stepper.step(&mut state, &[], &mut rngs);
                state.states[0]
            })
            .sum();
        assert_abs_diff_eq!(ups as f64 / steps as f64, 0.5, epsilon = 0.01);
    }

    #[test]
    fn two_spin_exact_propagation_matches_the_transition_matrix() {
        let p = GlauberParams { beta: 0.7, h: 0.2, j: 0.9 };
        let spec = glauber_agent(p, 2, &[(0, 1)]).unwrap();
        let t = two_spin_transition_matrix(p);
        let mut prop = ExactPropagator::new(&spec, 1 << 16).unwrap();
        for from in 0..4u64 {
            // The propagator starts from zero inboxes, so step 1 sees both
            // neighbor spins as down regardless of `from`; from step 2 on,
            // inboxes carry the true states and the matrix row applies.
            // Compare the two-step law.
            let dist = prop.batch(from, &[], 2);
            let u0 = heat_bath_up(p.beta, p.h - p.j);
            let mut one = [0.0f64; 4];
            for (mid, slot) in one.iter_mut().enumerate() {
                let q0 = if mid & 1 == 1 { u0 } else { 1.0 - u0 };
                let q1 = if (mid >> 1) & 1 == 1 { u0 } else { 1.0 - u0 };
                *slot = q0 * q1;
            }
            let mut two = [0.0f64; 4];
            for (mid, &pm) in one.iter().enumerate() {
                for (to, slot) in two.iter_mut().enumerate() {
                    *slot += pm * t[mid][to];
                }
            }
            let mut got = [0.0f64; 4];
            for &(flat, p_flat) in dist.iter() {
                got[flat as usize] += p_flat;
            }
            for to in 0..4 {
                assert_abs_diff_eq!(got[to], two[to], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn seeded_ring_step_uses_true_neighbor_spins() {
        // With seeded inboxes, beta -> infinity and h=0 makes each spin copy
        // the majority of its two neighbors; j>0, all-up stays all-up.
        let p = GlauberParams { beta: 50.0, h: 0.0, j: 1.0 };
        let spec = glauber_ring(p, 5).unwrap();
        let stepper = Stepper::new(&spec);
        let mut state = AgentState::with_states(&spec, vec![1; 5]);
        seed_inboxes_with_parent_states(&stepper, &mut state);
        let mut rngs: Vec<ChaCha8Rng> =
            (0..5).map(ChaCha8Rng::seed_from_u64).collect();
        for _ in 0..50 {
            stepper.step(&mut state, &[], &mut rngs);
            assert_eq!(state.states, vec![1; 5]);
        }
    }
}
