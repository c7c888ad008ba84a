//! Embeddings of familiar machine models into the agent formalism.
//!
//! Each adapter builds an [`crate::mcm::AgentSpec`] whose synchronous runs
//! reproduce a well-studied reference system step for step, plus a direct
//! (non-agent) implementation of the same system for differential testing.
//! Messages carry each machine's *new* state, so inboxes must be seeded with
//! the parents' initial states before the first step; see
//! [`crate::engine::seed_inboxes_with_parent_states`].

pub mod ca;
pub mod glauber;
pub mod mealy;
