//! Sampled replicate ensembles.
//!
//! A particle is one `(Society state, Environment state)` pair. An ensemble
//! of particles advances through an iteration in parallel — every replicate
//! gets its own seed coordinates, so the result is independent of thread
//! count and scheduling — and yields joint counts of (Society boundary
//! state, Environment end state) for the plug-in harvest estimator.

use rayon::prelude::*;

use crate::harvest::{JointCounts, JointDist};
use crate::mcm::AgentSpec;

use super::{run_iteration, AgentState, AgentTag, IterationTrace, Purpose, SeedPlan, Stepper};

/// Draw `replicates` particles from a joint boundary distribution over
/// (Society flat state, Environment flat state).
pub fn draw_particles(
    society: &AgentSpec,
    environment: &AgentSpec,
    boundary: &JointDist,
    replicates: u64,
    plan: &SeedPlan,
    iteration: u64,
) -> Vec<(AgentState, AgentState)> {
    let s_shape = society.state_shape();
    let e_shape = environment.state_shape();
    assert_eq!(boundary.rows() as u64, s_shape.total().expect("society space overflow"));
    assert_eq!(boundary.cols() as u64, e_shape.total().expect("environment space overflow"));
    (0..replicates)
        .map(|r| {
            let mut rng = plan.rng_for(Purpose::Boundary, iteration, AgentTag::Joint, 0, r);
            let (s, e) = boundary.sample(&mut rng);
            (
                AgentState::with_states(society, s_shape.unflatten(s)),
                AgentState::with_states(environment, e_shape.unflatten(e)),
            )
        })
        .collect()
}

/// Advance every particle through one iteration and count
/// (Society boundary, Environment end) pairs. The returned trace is
/// replicate 0's, for logging.
pub fn ensemble_iteration(
    society: &AgentSpec,
    environment: &AgentSpec,
    particles: &mut [(AgentState, AgentState)],
    plan: &SeedPlan,
    iteration: u64,
) -> (JointCounts, IterationTrace) {
    let s_stepper = Stepper::new(society);
    let e_stepper = Stepper::new(environment);
    let s_shape = society.state_shape();
    let e_shape = environment.state_shape();

    // Reference trace: rerun replicate 0 on a copy. Same seed coordinates,
    // same trajectory — cheap relative to the ensemble itself.
    let reference = {
        let (mut s, mut e) = particles[0].clone();
        run_iteration(&s_stepper, &mut s, &e_stepper, &mut e, plan, iteration, 0)
    };

    let pairs: Vec<(u64, u64)> = particles
        .par_iter_mut()
        .enumerate()
        .map(|(r, (s, e))| {
            run_iteration(&s_stepper, s, &e_stepper, e, plan, iteration, r as u64);
            // The Society holds its post-batch boundary state through the
            // Environment's batch, so after the iteration `s` *is* the
            // boundary state the harvest pairs with the Environment's end.
            (s_shape.flatten(&s.states), e_shape.flatten(&e.states))
        })
        .collect();

    let mut counts = JointCounts::zeros(
        s_shape.total().expect("society space overflow") as usize,
        e_shape.total().expect("environment space overflow") as usize,
    );
    for (s0, e_end) in pairs {
        counts.add(s0, e_end);
    }
    (counts, reference)
}

/// One-shot rollout: draw particles from a boundary distribution, run one
/// iteration, return the counts plus the advanced particles.
pub fn ensemble_rollout(
    society: &AgentSpec,
    environment: &AgentSpec,
    boundary: &JointDist,
    replicates: u64,
    plan: &SeedPlan,
    iteration: u64,
) -> (JointCounts, Vec<(AgentState, AgentState)>, IterationTrace) {
    let mut particles = draw_particles(society, environment, boundary, replicates, plan, iteration);
    let (counts, reference) = ensemble_iteration(society, environment, &mut particles, plan, iteration);
    (counts, particles, reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harvest;
    use crate::mcm::{LinForm, MachineSpec, MessageGraph, Role, Rule};
    use approx::assert_abs_diff_eq;

    /// One-bit Society whose state persists; one-bit Environment that copies
    /// its (noiseless) observation of the Society.
    fn copy_pair() -> (AgentSpec, AgentSpec) {
        let hold = MachineSpec {
            id: 0,
            cardinality: 2,
            role: Role::Generic,
            rule: Rule::LinearRing {
                state: LinForm { own: 1, input: vec![0], inbox: vec![], constant: 0 },
                message: LinForm { own: 0, input: vec![0], inbox: vec![], constant: 0 },
            },
        };
        let copy = MachineSpec {
            id: 0,
            cardinality: 2,
            role: Role::Generic,
            rule: Rule::LinearRing {
                state: LinForm { own: 0, input: vec![1], inbox: vec![], constant: 0 },
                message: LinForm { own: 0, input: vec![0], inbox: vec![], constant: 0 },
            },
        };
        let society = AgentSpec {
            tau: 1,
            msg_cardinality: 2,
            sigma: 0.0,
            input_shape: vec![2],
            graph: MessageGraph::empty(1, 1),
            machines: vec![hold],
        };
        let environment = AgentSpec {
            tau: 1,
            msg_cardinality: 2,
            sigma: 0.0,
            input_shape: vec![2],
            graph: MessageGraph::empty(1, 1),
            machines: vec![copy],
        };
        (society, environment)
    }

    #[test]
    fn noiseless_copy_recovers_one_bit() {
        let (society, environment) = copy_pair();
        let boundary = JointDist::uniform(2, 2);
        let plan = SeedPlan::new(77);
        let (counts, _, _) =
            ensemble_rollout(&society, &environment, &boundary, 20_000, &plan, 0);
        assert_eq!(counts.total(), 20_000);
        // The copy is perfect, so the plug-in estimate equals the entropy of
        // the *empirical* boundary marginal: 1 bit minus a sampling deficit.
        let mi = harvest::mi_plugin(&counts, false);
        assert_abs_diff_eq!(mi, 1.0, epsilon = 0.01);
        assert!(mi <= 1.0);
        // The same joint taken exactly is exactly one bit.
        let mut exact = harvest::JointDist::zeros(2, 2);
        *exact.at_mut(0, 0) = 0.5;
        *exact.at_mut(1, 1) = 0.5;
        assert_abs_diff_eq!(harvest::mi_exact(&exact), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rollouts_replay_under_the_same_plan() {
        let (society, environment) = copy_pair();
        let boundary = JointDist::uniform(2, 2);
        let plan = SeedPlan::new(3);
        let (c1, p1, t1) = ensemble_rollout(&society, &environment, &boundary, 500, &plan, 4);
        let (c2, p2, t2) = ensemble_rollout(&society, &environment, &boundary, 500, &plan, 4);
        assert_eq!(c1, c2);
        assert_eq!(p1, p2);
        assert_eq!(t1, t2);
        let (c3, ..) = ensemble_rollout(&society, &environment, &boundary, 500, &plan, 5);
        assert_ne!(c1, c3, "different iterations should draw different noise");
    }

    #[test]
    fn particles_advance_in_place_across_iterations() {
        let (society, environment) = copy_pair();
        let boundary = JointDist::point(2, 2, 1, 0);
        let plan = SeedPlan::new(9);
        let mut particles = draw_particles(&society, &environment, &boundary, 64, &plan, 0);
        assert!(particles.iter().all(|(s, e)| s.states == [1] && e.states == [0]));
        let (counts, _) = ensemble_iteration(&society, &environment, &mut particles, &plan, 0);
        // The environment copied the society bit; every particle agrees.
        assert!(particles.iter().all(|(s, e)| s.states == [1] && e.states == [1]));
        assert_eq!(counts.total(), 64);
        // Point boundary carries no information.
        assert_abs_diff_eq!(harvest::mi_plugin(&counts, false), 0.0, epsilon = 1e-12);
    }
}
