//! Mealy transducers driven by a cyclic input stream.
//!
//! Two machines: a counter that walks the stream and announces the next
//! symbol, and the transducer proper, which consumes one symbol per step
//! from its inbox. Seeding the transducer's inbox with `stream[0]` lines the
//! phases up so step `t` processes `stream[t % len]`.

use crate::mcm::{AgentSpec, MachineSpec, MessageGraph, Role, Rule, ValidationError};
use crate::space::Shape;
use thiserror::Error;

/// A deterministic Mealy transducer `(Q, Sigma, Lambda, delta, lambda)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MealyMachine {
    pub states: u32,
    pub inputs: u32,
    pub outputs: u32,
    /// `transition[q * inputs + a]` = next state.
    pub transition: Vec<u32>,
    /// `output[q * inputs + a]` = emitted symbol.
    pub output: Vec<u32>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MealyError {
    #[error("transition/output tables need {expected} rows, got {got}")]
    TableSize { expected: usize, got: usize },
    #[error("table value {value} outside range {range}")]
    Range { value: u32, range: u32 },
    #[error("stream symbol {0} outside the input alphabet")]
    BadStream(u32),
    #[error("stream is empty")]
    EmptyStream,
    #[error("{steps} steps exceed the {len}-symbol stream and wrapping is disabled")]
    StreamExhausted { steps: u32, len: usize },
    #[error(transparent)]
    Agent(#[from] ValidationError),
}

impl MealyMachine {
    pub fn validate(&self) -> Result<(), MealyError> {
        let expected = (self.states * self.inputs) as usize;
        if self.transition.len() != expected || self.output.len() != expected {
            return Err(MealyError::TableSize {
                expected,
                got: self.transition.len().max(self.output.len()),
            });
        }
        for &q in &self.transition {
            if q >= self.states {
                return Err(MealyError::Range { value: q, range: self.states });
            }
        }
        for &y in &self.output {
            if y >= self.outputs {
                return Err(MealyError::Range { value: y, range: self.outputs });
            }
        }
        Ok(())
    }
}

/// Embed a Mealy machine fed by `stream`, repeated cyclically.
///
/// With `allow_wrap=false` the caller promises to run at most `stream.len()`
/// steps; budget checks against that promise use [`check_horizon`].
pub fn mealy_agent(m: &MealyMachine, stream: &[u32]) -> Result<AgentSpec, MealyError> {
    m.validate()?;
    if stream.is_empty() {
        return Err(MealyError::EmptyStream);
    }
    if let Some(&bad) = stream.iter().find(|&&s| s >= m.inputs) {
        return Err(MealyError::BadStream(bad));
    }
    let k = stream.len() as u32;
    let msg = m.inputs.max(m.outputs);
    // Counter: state t -> t+1 mod k, announcing the symbol the transducer
    // should process on the *next* step.
    let counter_entries: Vec<(u32, u32)> = (0..k)
        .map(|t| {
            let next = (t + 1) % k;
            (next, stream[next as usize])
        })
        .collect();
    // Transducer: rows indexed by (own state, inbox symbol).
    let core_entries: Vec<(u32, u32)> = Shape::new(vec![m.states, msg])
        .iter()
        .map(|t| {
            let (q, a) = (t[0], t[1] % m.inputs);
            let row = (q * m.inputs + a) as usize;
            (m.transition[row], m.output[row])
        })
        .collect();
    let spec = AgentSpec {
        tau: 1,
        msg_cardinality: msg,
        sigma: 0.0,
        input_shape: vec![],
        graph: MessageGraph { nodes: 2, edges: vec![(0, 1)], fan_out_cap: 1 },
        machines: vec![
            MachineSpec {
                id: 0,
                cardinality: k,
                role: Role::Generic,
                rule: Rule::Table { entries: counter_entries },
            },
            MachineSpec {
                id: 1,
                cardinality: m.states,
                role: Role::Generic,
                rule: Rule::Table { entries: core_entries },
            },
        ],
    };
    crate::mcm::validate_agent(&spec)?;
    Ok(spec)
}

/// Reject horizons that would wrap a stream declared non-cyclic.
pub fn check_horizon(stream_len: usize, steps: u32, allow_wrap: bool) -> Result<(), MealyError> {
    if !allow_wrap && steps as usize > stream_len {
        Err(MealyError::StreamExhausted { steps, len: stream_len })
    } else {
        Ok(())
    }
}

/// Direct run of the transducer over the cyclic stream: the output trace of
/// `steps` symbols. Ground truth for differential tests.
pub fn mealy_reference(m: &MealyMachine, stream: &[u32], steps: u32) -> Vec<u32> {
    let mut q = 0u32;
    (0..steps)
        .map(|t| {
            let a = stream[t as usize % stream.len()];
            let row = (q * m.inputs + a) as usize;
            let y = m.output[row];
            q = m.transition[row];
            y
        })
        .collect()
}
