//! Simulation engine for two co-evolving collectives of communicating machines.
//!
//! A *Society* agent and an *Environment* agent each consist of finite-state
//! machines wired by a directed message graph. The agents take turns running
//! batches of synchronous timesteps, observing each other through a noisy
//! symmetric channel. The Society harvests energy in proportion to the
//! information its boundary state carries about the Environment's future,
//! pays thermodynamically-motivated costs to grow its own computational
//! resources, and can be driven by a black-box policy optimizer.
//!
//! Module map:
//! - [`mcm`]: machine/graph/rule types, validation, single-machine stepping
//! - [`channel`]: the symmetric noisy observation channel
//! - [`engine`]: seeds, timestep/iteration loops, exact propagation, ensembles,
//!   and the full co-evolving simulation driver
//! - [`harvest`]: mutual-information and Kelly-gambling energy functionals
//! - [`evolution`]: cost families, budget allocation, structural growth
//! - [`optimize`]: policy encoding and random-restart hill climbing
//! - [`adapters`]: cellular automata, Mealy machines, and Glauber spin kernels
//!   expressed as machine collectives
//! - [`harness`]: run configs, scenario presets, detectors, run-directory I/O

pub mod adapters;
pub mod channel;
pub mod engine;
pub mod evolution;
pub mod harness;
pub mod harvest;
pub mod mcm;
pub mod optimize;
pub mod space;

pub use mcm::{AgentSpec, MachineSpec, MessageGraph, Role, Rule, ValidationError};
