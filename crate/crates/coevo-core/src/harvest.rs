//! Energy harvest functionals.
//!
//! The Society's free-energy intake per iteration is the mutual information
//! between its boundary state at the start of the iteration and the
//! Environment's state at the end of it — computed exactly from a joint
//! distribution, or estimated from ensemble counts with the plug-in
//! estimator. A betting variant prices the same information through Kelly
//! gambling: side information raises the achievable log growth rate by
//! exactly the mutual information between outcomes and observations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::space::Shape;

const LN_2: f64 = std::f64::consts::LN_2;

/// Dense joint distribution over `(row, col)` pairs — rows index Society
/// boundary states, columns index Environment end states.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDist {
    p: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl JointDist {
    pub fn new(p: Vec<f64>, rows: usize, cols: usize) -> Self {
        assert_eq!(p.len(), rows * cols);
        debug_assert!(p.iter().all(|&x| x >= 0.0));
        JointDist { p, rows, cols }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        JointDist { p: vec![0.0; rows * cols], rows, cols }
    }

    /// Independent uniform over both coordinates.
    pub fn uniform(rows: usize, cols: usize) -> Self {
        JointDist { p: vec![1.0 / (rows * cols) as f64; rows * cols], rows, cols }
    }

    /// Point mass on one pair.
    pub fn point(rows: usize, cols: usize, row: u64, col: u64) -> Self {
        let mut d = Self::zeros(rows, cols);
        *d.at_mut(row, col) += 1.0;
        d
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, row: u64, col: u64) -> f64 {
        self.p[row as usize * self.cols + col as usize]
    }

    pub fn at_mut(&mut self, row: u64, col: u64) -> &mut f64 {
        &mut self.p[row as usize * self.cols + col as usize]
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    pub fn normalize(&mut self) {
        let t = self.total();
        assert!(t > 0.0, "cannot normalize an all-zero joint");
        self.p.iter_mut().for_each(|x| *x /= t);
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.rows];
        for (i, &p) in self.p.iter().enumerate() {
            m[i / self.cols] += p;
        }
        m
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for (i, &p) in self.p.iter().enumerate() {
            m[i % self.cols] += p;
        }
        m
    }

    /// Draw one `(row, col)` pair by inverse CDF in index order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (u64, u64) {
        let u: f64 = rng.random::<f64>() * self.total();
        let mut acc = 0.0;
        for (i, &p) in self.p.iter().enumerate() {
            acc += p;
            if u < acc {
                return ((i / self.cols) as u64, (i % self.cols) as u64);
            }
        }
        let last = self.p.len() - 1;
        ((last / self.cols) as u64, (last % self.cols) as u64)
    }
}

/// Empirical joint counts over `(row, col)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointCounts {
    counts: Vec<u64>,
    rows: usize,
    cols: usize,
}

impl JointCounts {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        JointCounts { counts: vec![0; rows * cols], rows, cols }
    }

    pub fn add(&mut self, row: u64, col: u64) {
        self.add_n(row, col, 1);
    }

    pub fn add_n(&mut self, row: u64, col: u64, n: u64) {
        self.counts[row as usize * self.cols + col as usize] += n;
    }

    pub fn at(&self, row: u64, col: u64) -> u64 {
        self.counts[row as usize * self.cols + col as usize]
    }

    pub fn merge(mut self, other: &JointCounts) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Empirical joint distribution (counts / total).
    pub fn to_dist(&self) -> JointDist {
        let n = self.total() as f64;
        assert!(n > 0.0, "no observations");
        JointDist::new(self.counts.iter().map(|&c| c as f64 / n).collect(), self.rows, self.cols)
    }
}

/// Shannon entropy in bits of a (sub)distribution given as raw weights.
pub fn entropy_bits(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut h = 0.0;
    for &w in weights {
        if w > 0.0 {
            let p = w / total;
            h -= p * p.log2();
        }
    }
    h
}

/// Exact mutual information in bits of a joint distribution.
/// Deterministic: plain summation in index order, no sampling.
pub fn mi_exact(joint: &JointDist) -> f64 {
    let rm = joint.row_marginal();
    let cm = joint.col_marginal();
    let total = joint.total();
    debug_assert!((total - 1.0).abs() < 1e-6, "joint should be normalized, total {total}");
    let mut mi = 0.0;
    for (r, &pr) in rm.iter().enumerate() {
        for (c, &pc) in cm.iter().enumerate() {
            let p = joint.at(r as u64, c as u64);
            if p > 0.0 {
                mi += p * (p / (pr * pc)).log2();
            }
        }
    }
    // Rounding can pull a tiny positive quantity just below zero.
    mi.max(0.0)
}

fn support(weights: &[f64]) -> usize {
    weights.iter().filter(|&&w| w > 0.0).count()
}

/// Plug-in mutual information from counts: `H(R) + H(C) - H(R,C)` on the
/// empirical distribution, optionally with the Miller–Madow bias correction
/// applied to each entropy term.
pub fn mi_plugin(counts: &JointCounts, miller_madow: bool) -> f64 {
    let n = counts.total();
    assert!(n > 0, "no observations");
    let dist = counts.to_dist();
    let rm = dist.row_marginal();
    let cm = dist.col_marginal();
    let h_r = entropy_bits(&rm);
    let h_c = entropy_bits(&cm);
    let h_rc = entropy_bits(&dist.p);
    let mut mi = h_r + h_c - h_rc;
    if miller_madow {
        let k_r = support(&rm) as f64;
        let k_c = support(&cm) as f64;
        let k_rc = support(&dist.p) as f64;
        mi += ((k_r - 1.0) + (k_c - 1.0) - (k_rc - 1.0)) / (2.0 * n as f64 * LN_2);
    }
    mi.max(0.0)
}

/// A repeated gamble: outcome `w` occurs with probability `probs[w]` and
/// pays `odds[w]`-for-1 on money placed on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KellyGame {
    pub probs: Vec<f64>,
    pub odds: Vec<f64>,
}

impl KellyGame {
    pub fn validate(&self) -> Result<(), String> {
        if self.probs.len() != self.odds.len() || self.probs.is_empty() {
            return Err("probs and odds must be non-empty and equal length".into());
        }
        if self.probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err("probabilities must lie in [0, 1]".into());
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("probabilities sum to {total}, not 1"));
        }
        if self.odds.iter().any(|&o| o.is_nan() || o <= 0.0) {
            return Err("odds must be positive".into());
        }
        Ok(())
    }

    pub fn outcomes(&self) -> usize {
        self.probs.len()
    }
}

/// Proportional betting — the log-optimal allocation for full reinvestment,
/// independent of the odds.
pub fn kelly_allocation(probs: &[f64]) -> Vec<f64> {
    probs.to_vec()
}

/// Expected log2 growth rate of bankroll fractions `allocation` (summing to
/// one, full reinvestment): `sum_w p_w * log2(odds_w * b_w)`.
/// Betting zero on a possible outcome gives `-inf` — ruin is certain.
pub fn log_growth_rate(game: &KellyGame, allocation: &[f64]) -> f64 {
    debug_assert_eq!(allocation.len(), game.outcomes());
    let mut g = 0.0;
    for ((&p, &o), &b) in game.probs.iter().zip(&game.odds).zip(allocation) {
        if p > 0.0 {
            g += p * (o * b).log2();
        }
    }
    g
}

/// Realized log2 growth over observed outcome frequencies.
pub fn empirical_log_growth(game: &KellyGame, allocation: &[f64], outcome_counts: &[u64]) -> f64 {
    debug_assert_eq!(outcome_counts.len(), game.outcomes());
    let n: u64 = outcome_counts.iter().sum();
    assert!(n > 0, "no outcomes observed");
    let mut g = 0.0;
    for ((&c, &o), &b) in outcome_counts.iter().zip(&game.odds).zip(allocation) {
        if c > 0 {
            g += (c as f64 / n as f64) * (o * b).log2();
        }
    }
    g
}

/// Joint distribution of `(outcome, observation)` when each outcome is seen
/// through a symmetric noisy channel over the same alphabet.
pub fn side_info_joint(probs: &[f64], sigma: f64) -> JointDist {
    let k = probs.len();
    let ch = crate::channel::ObservationChannel::new(sigma, Shape::new(vec![k as u32]));
    let mut joint = JointDist::zeros(k, k);
    for (w, &p) in probs.iter().enumerate() {
        for y in 0..k {
            *joint.at_mut(w as u64, y as u64) += p * ch.coord_prob(k as u32, w as u32, y as u32);
        }
    }
    joint
}

/// Conditional proportional betting `b(w|y) = P(w|y)` for every observation.
/// Rows index observations `y`; each row is an allocation over outcomes.
pub fn side_info_allocation(joint: &JointDist) -> Vec<Vec<f64>> {
    let cm = joint.col_marginal();
    (0..joint.cols())
        .map(|y| {
            (0..joint.rows())
                .map(|w| {
                    if cm[y] > 0.0 {
                        joint.at(w as u64, y as u64) / cm[y]
                    } else {
                        1.0 / joint.rows() as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Expected log2 growth with side information: observe `y`, bet `b(.|y)`.
pub fn side_info_growth(game: &KellyGame, joint: &JointDist, per_obs: &[Vec<f64>]) -> f64 {
    debug_assert_eq!(joint.rows(), game.outcomes());
    debug_assert_eq!(joint.cols(), per_obs.len());
    let mut g = 0.0;
    for (y, bets) in per_obs.iter().enumerate() {
        for (w, &odds) in game.odds.iter().enumerate() {
            let p = joint.at(w as u64, y as u64);
            if p > 0.0 {
                g += p * (odds * bets[w]).log2();
            }
        }
    }
    g
}

/// Draw down a finite store: at most `store` can actually be harvested.
/// Returns `(effective, new_store)` with `0 <= effective <= raw` and the
/// store never going negative.
pub fn deplete(store: f64, raw: f64) -> (f64, f64) {
    debug_assert!(store >= 0.0 && raw >= 0.0);
    let effective = raw.min(store);
    (effective, store - effective)
}

/// One iteration's energy accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestReport {
    pub raw: f64,
    pub effective: f64,
    pub store_before: Option<f64>,
    pub store_after: Option<f64>,
    /// For betting harvests: the signed realized log growth before the
    /// nonnegativity clamp that defines `raw`.
    pub realized_log_growth: Option<f64>,
}

/// Cap a raw harvest against an optional store and account for the draw.
/// Without a store the harvest passes through uncapped.
pub fn settle(raw: f64, store: Option<f64>, realized_log_growth: Option<f64>) -> HarvestReport {
    let (effective, store_after) = match store {
        Some(s) => {
            let (eff, rest) = deplete(s, raw);
            (eff, Some(rest))
        }
        None => (raw, None),
    };
    HarvestReport { raw, effective, store_before: store, store_after, realized_log_growth }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mi_of_perfect_correlation_is_log_alphabet() {
        for k in [2usize, 3, 4, 8] {
            let mut j = JointDist::zeros(k, k);
            for i in 0..k {
                *j.at_mut(i as u64, i as u64) = 1.0 / k as f64;
            }
            assert_abs_diff_eq!(mi_exact(&j), (k as f64).log2(), epsilon = 1e-12);
        }
    }

    #[test]
    fn mi_of_independence_is_zero() {
        let j = JointDist::uniform(4, 6);
        assert_abs_diff_eq!(mi_exact(&j), 0.0, epsilon = 1e-12);
        let j = JointDist::point(3, 5, 2, 4);
        assert_abs_diff_eq!(mi_exact(&j), 0.0, epsilon = 1e-12);
    }

    /// Independent oracle: compute MI as H(R) + H(C) - H(R,C); the
    /// implementation sums p*log(p/(q*r)) directly.
    fn mi_entropy_oracle(joint: &JointDist) -> f64 {
        entropy_bits(&joint.row_marginal()) + entropy_bits(&joint.col_marginal())
            - entropy_bits(&joint.p)
    }

    #[test]
    fn mi_matches_entropy_decomposition_on_random_joints() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let rows = 2 + (rng.random::<u32>() % 5) as usize;
            let cols = 2 + (rng.random::<u32>() % 5) as usize;
            let mut p: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
            let total: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= total);
            let j = JointDist::new(p, rows, cols);
            let mi = mi_exact(&j);
            assert_abs_diff_eq!(mi, mi_entropy_oracle(&j), epsilon = 1e-10);
            let bound = (rows.min(cols) as f64).log2();
            assert!((-1e-12..=bound + 1e-12).contains(&mi), "mi {mi} outside [0, {bound}]");
        }
    }

    #[test]
    fn plugin_estimate_converges_to_truth() {
        // Noisy binary copy: X uniform, Y = X flipped with prob 0.1.
        let mut truth = JointDist::zeros(2, 2);
        *truth.at_mut(0, 0) = 0.45;
        *truth.at_mut(0, 1) = 0.05;
        *truth.at_mut(1, 0) = 0.05;
        *truth.at_mut(1, 1) = 0.45;
        let expected = mi_exact(&truth);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut counts = JointCounts::zeros(2, 2);
        for _ in 0..100_000 {
            let (r, c) = truth.sample(&mut rng);
            counts.add(r, c);
        }
        let plugin = mi_plugin(&counts, false);
        assert_abs_diff_eq!(plugin, expected, epsilon = 0.01);
        let mm = mi_plugin(&counts, true);
        assert!((mm - plugin).abs() < 1e-4, "correction should be tiny at this sample size");
    }

    #[test]
    fn miller_madow_shifts_by_support_count() {
        let mut counts = JointCounts::zeros(2, 2);
        counts.add(0, 0);
        counts.add(1, 1);
        counts.add(0, 1);
        counts.add(1, 0);
        let n = 4.0;
        let correction = ((2.0 - 1.0) + (2.0 - 1.0) - (4.0 - 1.0)) / (2.0 * n * LN_2);
        assert_abs_diff_eq!(
            mi_plugin(&counts, true),
            (mi_plugin(&counts, false) + correction).max(0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn fair_binary_growth_has_closed_form() {
        // Fair odds 2-for-1, bet proportionally: G = 1 - H2(p).
        let p = 0.75;
        let game = KellyGame { probs: vec![p, 1.0 - p], odds: vec![2.0, 2.0] };
        game.validate().unwrap();
        let g = log_growth_rate(&game, &kelly_allocation(&game.probs));
        let h2 = -(p * p.log2() + (1.0 - p) * (1.0 - p).log2());
        assert_abs_diff_eq!(g, 1.0 - h2, epsilon = 1e-12);
    }

    #[test]
    fn proportional_betting_beats_neighbors_on_a_grid() {
        // Coarse sanity check; the fine-grid version lives in the
        // acceptance suite. Any simplex point at distance >= 0.05 from
        // b = p must not beat it.
        let game = KellyGame { probs: vec![0.6, 0.3, 0.1], odds: vec![2.5, 3.0, 9.0] };
        let best = log_growth_rate(&game, &kelly_allocation(&game.probs));
        let steps = 20; // grid step 0.05
        for i in 0..=steps {
            for j in 0..=steps - i {
                let b = [
                    i as f64 / steps as f64,
                    j as f64 / steps as f64,
                    (steps - i - j) as f64 / steps as f64,
                ];
                assert!(log_growth_rate(&game, &b) <= best + 1e-12);
            }
        }
    }

    #[test]
    fn side_information_gain_equals_mutual_information() {
        // Exact identity: conditional proportional betting raises the growth
        // rate by I(W; Y), whatever the odds.
        for &sigma in &[0.0, 0.2, 0.5, 0.9] {
            let probs = vec![0.5, 0.3, 0.2];
            let game = KellyGame { probs: probs.clone(), odds: vec![2.0, 5.0, 4.0] };
            let joint = side_info_joint(&probs, sigma);
            let base = log_growth_rate(&game, &kelly_allocation(&probs));
            let side = side_info_growth(&game, &joint, &side_info_allocation(&joint));
            assert_abs_diff_eq!(side - base, mi_exact(&joint), epsilon = 1e-10);
        }
    }

    #[test]
    fn empirical_growth_matches_expected_growth_at_exact_frequencies() {
        let game = KellyGame { probs: vec![0.25, 0.75], odds: vec![4.0, 4.0 / 3.0] };
        let alloc = kelly_allocation(&game.probs);
        // Counts exactly proportional to the probabilities.
        let g = empirical_log_growth(&game, &alloc, &[25, 75]);
        assert_abs_diff_eq!(g, log_growth_rate(&game, &alloc), epsilon = 1e-12);
    }

    #[test]
    fn depletion_caps_and_never_goes_negative() {
        let (eff, store) = deplete(10.0, 3.0);
        assert_eq!((eff, store), (3.0, 7.0));
        let (eff, store) = deplete(2.0, 3.0);
        assert_eq!((eff, store), (2.0, 0.0));
        let (eff, store) = deplete(0.0, 5.0);
        assert_eq!((eff, store), (0.0, 0.0));
        // Dyadic values telescope exactly.
        let mut store = 6.25;
        let raws = [1.5, 2.25, 0.125, 4.0, 0.0, 1.0];
        let mut harvested = 0.0;
        for &r in &raws {
            let (eff, next) = deplete(store, r);
            assert!(eff <= r && eff >= 0.0 && next >= 0.0);
            harvested += eff;
            store = next;
        }
        assert_eq!(harvested, 6.25 - store);
    }

    #[test]
    fn settle_reports_the_draw_and_passes_through_without_a_store() {
        let r = settle(3.0, Some(10.0), None);
        assert_eq!((r.raw, r.effective), (3.0, 3.0));
        assert_eq!((r.store_before, r.store_after), (Some(10.0), Some(7.0)));
        let r = settle(3.0, Some(2.0), Some(-0.4));
        assert_eq!((r.effective, r.store_after), (2.0, Some(0.0)));
        assert_eq!(r.realized_log_growth, Some(-0.4));
        let r = settle(5.0, None, None);
        assert_eq!((r.effective, r.store_before, r.store_after), (5.0, None, None));
        // The accounting identity the fields promise.
        assert_eq!(r.effective.min(r.raw), r.effective);
        let r = settle(9.5, Some(4.25), None);
        assert_eq!(r.store_after.unwrap(), r.store_before.unwrap() - r.effective);
    }

    #[test]
    fn joint_sampling_hits_declared_frequencies() {
        let mut j = JointDist::zeros(2, 3);
        *j.at_mut(0, 0) = 0.5;
        *j.at_mut(1, 2) = 0.25;
        *j.at_mut(0, 1) = 0.25;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = JointCounts::zeros(2, 3);
        let n = 40_000;
        for _ in 0..n {
            let (r, c) = j.sample(&mut rng);
            counts.add(r, c);
        }
        let d = counts.to_dist();
        assert_abs_diff_eq!(d.at(0, 0), 0.5, epsilon = 0.01);
        assert_abs_diff_eq!(d.at(1, 2), 0.25, epsilon = 0.01);
        assert_abs_diff_eq!(d.at(0, 1), 0.25, epsilon = 0.01);
        assert_eq!(d.at(1, 0), 0.0);
    }
}
