//! Mixed-radix index arithmetic for joint discrete state spaces.
//!
//! Joint states of a machine collective are tuples with per-coordinate
//! cardinalities. Exact enumeration, histogram estimators, and the channel
//! all need a stable bijection between tuples and flat indices; coordinate 0
//! varies fastest everywhere.

use serde::{Deserialize, Serialize};

/// Shape of a finite product space: one cardinality per coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    cards: Vec<u32>,
}

impl Shape {
    pub fn new(cards: Vec<u32>) -> Self {
        assert!(
            cards.iter().all(|&c| c >= 1),
            "every coordinate needs cardinality >= 1"
        );
        Shape { cards }
    }

    pub fn cards(&self) -> &[u32] {
        &self.cards
    }

    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }

    /// Number of points in the product space. `None` on overflow.
    pub fn total(&self) -> Option<u64> {
        let mut acc: u64 = 1;
        for &c in &self.cards {
            acc = acc.checked_mul(c as u64)?;
        }
        Some(acc)
    }

    /// Flat index of a tuple (coordinate 0 fastest).
    pub fn flatten(&self, tuple: &[u32]) -> u64 {
        debug_assert_eq!(tuple.len(), self.cards.len());
        let mut idx: u64 = 0;
        let mut stride: u64 = 1;
        for (i, &x) in tuple.iter().enumerate() {
            debug_assert!(x < self.cards[i], "coordinate {i} out of range");
            idx += x as u64 * stride;
            stride *= self.cards[i] as u64;
        }
        idx
    }

    /// Tuple for a flat index (inverse of [`Shape::flatten`]).
    pub fn unflatten(&self, mut idx: u64) -> Vec<u32> {
        let mut tuple = Vec::with_capacity(self.cards.len());
        for &c in &self.cards {
            tuple.push((idx % c as u64) as u32);
            idx /= c as u64;
        }
        debug_assert_eq!(idx, 0, "index out of range for shape");
        tuple
    }

    /// Iterate all tuples in flat-index order.
    pub fn iter(&self) -> ShapeIter<'_> {
        ShapeIter {
            shape: self,
            next: 0,
            total: self.total().expect("shape too large to enumerate"),
        }
    }
}

pub struct ShapeIter<'a> {
    shape: &'a Shape,
    next: u64,
    total: u64,
}

impl Iterator for ShapeIter<'_> {
    type Item = Vec<u32>;

    fn next(&mut self) -> Option<Vec<u32>> {
        if self.next >= self.total {
            return None;
        }
        let t = self.shape.unflatten(self.next);
        self.next += 1;
        Some(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_roundtrip_mixed_radix() {
        let shape = Shape::new(vec![2, 3, 5]);
        assert_eq!(shape.total(), Some(30));
        for idx in 0..30 {
            let t = shape.unflatten(idx);
            assert_eq!(shape.flatten(&t), idx);
        }
    }

    #[test]
    fn coordinate_zero_varies_fastest() {
        let shape = Shape::new(vec![2, 3]);
        assert_eq!(shape.unflatten(0), vec![0, 0]);
        assert_eq!(shape.unflatten(1), vec![1, 0]);
        assert_eq!(shape.unflatten(2), vec![0, 1]);
        assert_eq!(shape.flatten(&[1, 2]), 5);
    }

    #[test]
    fn iter_enumerates_everything_once() {
        let shape = Shape::new(vec![3, 2]);
        let all: Vec<Vec<u32>> = shape.iter().collect();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], vec![0, 0]);
        assert_eq!(all[5], vec![2, 1]);
    }

    #[test]
    fn total_overflow_reports_none() {
        let shape = Shape::new(vec![u32::MAX; 3]);
        assert_eq!(shape.total(), None);
    }
}
