//! Deterministic seed derivation.
//!
//! Every random draw in a run comes from a `ChaCha8Rng` keyed by the master
//! seed plus a coordinate tuple `(purpose, iteration, agent, machine,
//! replicate)`. Identical coordinates always produce identical streams, and
//! distinct coordinates produce independent-looking ones, so any subset of a
//! run (one replicate, one machine's noise, one optimizer restart) can be
//! replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is consumed for. Keeps unrelated draws on unrelated
/// streams even when the other coordinates collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Initial / boundary state draws.
    Boundary = 1,
    /// Observation-channel noise.
    Channel = 2,
    /// Stochastic rule rows.
    Kernel = 3,
    /// Optimizer proposals and restarts.
    Optimizer = 4,
    /// Random environment-family draws.
    EnvFamily = 5,
    /// Structural growth attachments.
    Growth = 6,
}

/// Which agent a stream belongs to (plus a joint slot for draws that touch
/// both, like boundary-state sampling).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum AgentTag {
    Society = 0,
    Environment = 1,
    Joint = 2,
}

/// Master seed plus the mixing scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    master: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedPlan {
    pub fn new(master: u64) -> Self {
        SeedPlan { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Derive the 64-bit key for a coordinate tuple.
    pub fn key(&self, purpose: Purpose, iteration: u64, agent: AgentTag, machine: u64, replicate: u64) -> u64 {
        let mut h = splitmix64(self.master ^ 0x6A09_E667_F3BC_C909);
        for (i, coord) in [purpose as u64, iteration, agent as u64, machine, replicate]
            .into_iter()
            .enumerate()
        {
            h = splitmix64(h ^ coord.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1)));
        }
        h
    }

    /// Deterministic stream for a coordinate tuple.
    pub fn rng_for(
        &self,
        purpose: Purpose,
        iteration: u64,
        agent: AgentTag,
        machine: u64,
        replicate: u64,
    ) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key(purpose, iteration, agent, machine, replicate))
    }
}
