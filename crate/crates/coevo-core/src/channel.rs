//! Symmetric noisy observation channel between the two agents.
//!
//! Each coordinate of the observed partner state passes independently through
//! a symmetric channel with noise level `sigma`: with probability `1 - sigma`
//! the coordinate arrives intact, with probability `sigma` it is replaced by
//! a uniform draw over the coordinate's alphabet (which can reproduce the
//! original value, so the flip rate is `sigma * (k-1)/k` for alphabet size
//! `k`).

use rand::Rng;

use crate::space::Shape;

/// Per-coordinate symmetric noise over a product alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationChannel {
    sigma: f64,
    shape: Shape,
}

impl ObservationChannel {
    /// `sigma` in `[0, 1]`; `shape` is the observed state's shape.
    pub fn new(sigma: f64, shape: Shape) -> Self {
        assert!((0.0..=1.0).contains(&sigma), "sigma {sigma} outside [0, 1]");
        ObservationChannel { sigma, shape }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Sample an observation of `truth`.
    pub fn observe<R: Rng + ?Sized>(&self, truth: &[u32], rng: &mut R) -> Vec<u32> {
        debug_assert_eq!(truth.len(), self.shape.len());
        truth
            .iter()
            .zip(self.shape.cards())
            .map(|(&x, &card)| {
                if self.sigma > 0.0 && rng.random::<f64>() < self.sigma {
                    rng.random_range(0..card)
                } else {
                    x
                }
            })
            .collect()
    }

    /// Transition probability `P(observed | truth)` for one coordinate.
    pub fn coord_prob(&self, card: u32, truth: u32, observed: u32) -> f64 {
        let uniform = self.sigma / card as f64;
        if observed == truth {
            (1.0 - self.sigma) + uniform
        } else {
            uniform
        }
    }

    /// Transition probability for a full tuple (coordinates independent).
    pub fn prob(&self, truth: &[u32], observed: &[u32]) -> f64 {
        debug_assert_eq!(truth.len(), self.shape.len());
        debug_assert_eq!(observed.len(), self.shape.len());
        truth
            .iter()
            .zip(observed)
            .zip(self.shape.cards())
            .map(|((&t, &o), &card)| self.coord_prob(card, t, o))
            .product()
    }

    /// Full observation distribution given the truth, as
    /// `(flat observation index, probability)` pairs in index order with
    /// zero-probability entries dropped.
    pub fn distribution(&self, truth: &[u32]) -> Vec<(u64, f64)> {
        if self.sigma == 0.0 {
            return vec![(self.shape.flatten(truth), 1.0)];
        }
        let mut out = Vec::new();
        for obs in self.shape.iter() {
            let p = self.prob(truth, &obs);
            if p > 0.0 {
                out.push((self.shape.flatten(&obs), p));
            }
        }
        out
    }

    /// Shannon capacity in bits of one coordinate's channel with alphabet
    /// size `card`. The channel is symmetric, so capacity is attained by the
    /// uniform input: `log2(card) - H(row)`.
    pub fn coord_capacity(&self, card: u32) -> f64 {
        let k = card as f64;
        let stay = (1.0 - self.sigma) + self.sigma / k;
        let leave = self.sigma / k;
        let h_row = entropy_term(stay) + (k - 1.0) * entropy_term(leave);
        (k.log2() - h_row).max(0.0)
    }

    /// Capacity of the whole product channel: coordinates are independent,
    /// so capacities add.
    pub fn capacity(&self) -> f64 {
        self.shape.cards().iter().map(|&c| self.coord_capacity(c)).sum()
    }
}

fn entropy_term(p: f64) -> f64 {
    if p <= 0.0 {
        0.0
    } else {
        -p * p.log2()
    }
}

/// Effective resolution `r = 1/sigma` (capped) used as a population-style
/// scalar for how sharply an agent resolves its partner.
pub fn resolution(sigma: f64, r_max: f64) -> f64 {
    if sigma <= 0.0 {
        r_max
    } else {
        (1.0 / sigma).min(r_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_sigma_is_the_identity() {
        let ch = ObservationChannel::new(0.0, Shape::new(vec![4, 3, 2]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let truth = vec![
                rng.random_range(0..4),
                rng.random_range(0..3),
                rng.random_range(0..2),
            ];
            assert_eq!(ch.observe(&truth, &mut rng), truth);
        }
        assert_eq!(ch.prob(&[1, 2, 1], &[1, 2, 1]), 1.0);
        assert_eq!(ch.prob(&[1, 2, 1], &[0, 2, 1]), 0.0);
    }

    #[test]
    fn full_noise_is_uniform_regardless_of_truth() {
        let ch = ObservationChannel::new(1.0, Shape::new(vec![4]));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0u32; 4];
        let n = 40_000;
        for _ in 0..n {
            counts[ch.observe(&[3], &mut rng)[0] as usize] += 1;
        }
        for &c in &counts {
            assert_abs_diff_eq!(c as f64 / n as f64, 0.25, epsilon = 0.01);
        }
        for o in 0..4 {
            assert_abs_diff_eq!(ch.prob(&[3], &[o]), 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn prob_rows_sum_to_one() {
        let shape = Shape::new(vec![3, 4]);
        for &sigma in &[0.0, 0.2, 0.5, 0.77, 1.0] {
            let ch = ObservationChannel::new(sigma, shape.clone());
            for truth in shape.iter() {
                let total: f64 = shape.iter().map(|obs| ch.prob(&truth, &obs)).sum();
                assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn distribution_is_normalized_and_matches_prob() {
        let shape = Shape::new(vec![3, 2]);
        for &sigma in &[0.0, 0.4, 1.0] {
            let ch = ObservationChannel::new(sigma, shape.clone());
            let truth = [2, 1];
            let dist = ch.distribution(&truth);
            let total: f64 = dist.iter().map(|&(_, p)| p).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            for &(obs_flat, p) in &dist {
                let obs = shape.unflatten(obs_flat);
                assert_abs_diff_eq!(p, ch.prob(&truth, &obs), epsilon = 1e-15);
            }
        }
        let ch = ObservationChannel::new(0.0, shape.clone());
        assert_eq!(ch.distribution(&[2, 1]), vec![(shape.flatten(&[2, 1]), 1.0)]);
    }

    #[test]
    fn empirical_frequencies_match_transition_probabilities() {
        // Binary coordinate at sigma = 0.5: stay probability 0.75.
        let ch = ObservationChannel::new(0.5, Shape::new(vec![2]));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let stays = (0..n).filter(|_| ch.observe(&[1], &mut rng)[0] == 1).count();
        assert_abs_diff_eq!(stays as f64 / n as f64, 0.75, epsilon = 0.01);
    }

    /// Brute-force capacity oracle: maximize I(X;Y) over input distributions
    /// on a 1-coordinate channel by grid search (valid for k=2 by symmetry
    /// plus concavity; for k>2 the symmetric channel's optimum is uniform,
    /// which the grid includes).
    fn capacity_oracle_binary(sigma: f64) -> f64 {
        let stay = (1.0 - sigma) + sigma / 2.0;
        let leave = sigma / 2.0;
        let mut best: f64 = 0.0;
        let steps = 10_000;
        for i in 0..=steps {
            let p = i as f64 / steps as f64;
            // Joint over (truth, observed) for input distribution (p, 1-p).
            let joint = [[p * stay, p * leave], [(1.0 - p) * leave, (1.0 - p) * stay]];
            let mut mi = 0.0;
            for t in 0..2 {
                for o in 0..2 {
                    let pj: f64 = joint[t][o];
                    if pj > 0.0 {
                        let pt = joint[t][0] + joint[t][1];
                        let po = joint[0][o] + joint[1][o];
                        mi += pj * (pj / (pt * po)).log2();
                    }
                }
            }
            best = best.max(mi);
        }
        best
    }

    #[test]
    fn binary_capacity_matches_grid_search_oracle() {
        for &sigma in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            let ch = ObservationChannel::new(sigma, Shape::new(vec![2]));
            let oracle = capacity_oracle_binary(sigma);
            assert_abs_diff_eq!(ch.coord_capacity(2), oracle, epsilon = 1e-7);
        }
    }

    #[test]
    fn capacity_limits() {
        let shape = Shape::new(vec![4]);
        assert_abs_diff_eq!(ObservationChannel::new(0.0, shape.clone()).capacity(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ObservationChannel::new(1.0, shape).capacity(), 0.0, epsilon = 1e-12);
        // Product channel adds coordinate capacities.
        let prod = ObservationChannel::new(0.0, Shape::new(vec![2, 4, 8]));
        assert_abs_diff_eq!(prod.capacity(), 1.0 + 2.0 + 3.0, epsilon = 1e-12);
    }

    #[test]
    fn resolution_caps_and_inverts() {
        assert_eq!(resolution(0.0, 100.0), 100.0);
        assert_eq!(resolution(0.5, 100.0), 2.0);
        assert_eq!(resolution(1e-9, 100.0), 100.0);
    }
}
