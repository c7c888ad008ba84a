//! Elementary cellular automata on a ring.
//!
//! Cell `i` listens to its two ring neighbors. Inbox slots follow ascending
//! parent order, so the slot holding the *left* neighbor differs between
//! interior cells and the two wrap-around cells; the per-cell lookup table
//! is built against that ordering, which is what makes the embedding exact.

use crate::mcm::{AgentSpec, MachineSpec, MessageGraph, Role, Rule, ValidationError};
use crate::space::Shape;

/// Build a width-`w` ring agent computing the elementary CA `rule`.
///
/// Requires `w >= 3` so each cell has two distinct neighbors.
pub fn ca_agent(rule: u8, width: usize) -> Result<AgentSpec, ValidationError> {
    assert!(width >= 3, "a ring CA needs at least 3 cells");
    let mut edges = Vec::with_capacity(2 * width);
    for i in 0..width {
        edges.push((i, (i + 1) % width));
        edges.push((i, (i + width - 1) % width));
    }
    let graph = MessageGraph { nodes: width, edges, fan_out_cap: 2 };
    let machines = (0..width)
        .map(|i| {
            let left = (i + width - 1) % width;
            let parents = graph.parents(i);
            debug_assert_eq!(parents.len(), 2);
            // Which inbox slot carries the left neighbor?
            let left_slot = parents.iter().position(|&p| p == left).unwrap();
            let entries = Shape::new(vec![2, 2, 2])
                .iter()
                .map(|t| {
                    let own = t[0];
                    let l = t[1 + left_slot];
                    let r = t[1 + (1 - left_slot)];
                    let idx = (l << 2) | (own << 1) | r;
                    let new = (rule >> idx) as u32 & 1;
                    (new, new)
                })
                .collect();
            MachineSpec { id: i, cardinality: 2, role: Role::Generic, rule: Rule::Table { entries } }
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

/// One synchronous step of the elementary CA `rule` on a ring, computed
/// directly on a cell array. Ground truth for differential tests.
pub fn ca_reference_step(rule: u8, cells: &[u32]) -> Vec<u32> {
    let w = cells.len();
    (0..w)
        .map(|i| {
            let l = cells[(i + w - 1) % w];
            let c = cells[i];
            let r = cells[(i + 1) % w];
            (rule >> ((l << 2) | (c << 1) | r)) as u32 & 1
        })
        .collect()
}
