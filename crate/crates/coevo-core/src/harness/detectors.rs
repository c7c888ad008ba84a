//! Post-hoc detectors over simulation logs.
//!
//! Both detectors are pure functions of the log rows: they read the banked
//! harvest and the population proxy columns and nothing else, so re-running
//! them on the same log always reproduces the same report.
//!
//! The run-away criterion has no quantitative definition in the source
//! material beyond "increasing exponentially faster than the population for
//! a sequence of iterations"; the reading implemented here — a positive
//! second difference of the per-capita log harvest sustained for `k`
//! iterations — is one defensible formalization and is documented as such.

use serde::{Deserialize, Serialize};

use crate::engine::sim::LogRow;

/// Escape-from-the-trap test: harvest growth outpaces population growth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeParams {
    /// Growth-ratio margin: flag requires G_t/G_{t-1} > (1+delta) P_t/P_{t-1}.
    pub delta: f64,
    /// Exceedances must run for this many consecutive iterations.
    pub consecutive: u32,
}

/// Run-away test: per-capita log harvest accelerates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunawayParams {
    /// Lower bound on the second difference of log2(G/P).
    pub threshold: f64,
    pub consecutive: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DetectorConfig {
    #[serde(default)]
    pub escape: Option<EscapeParams>,
    #[serde(default)]
    pub runaway: Option<RunawayParams>,
}

/// Flags per log row plus the first row where a full run completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorOutcome {
    pub flags: Vec<bool>,
    pub first_flag: Option<u64>,
}

/// Everything `analyze` derives from a log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub escape: Option<DetectorOutcome>,
    pub runaway: Option<DetectorOutcome>,
    pub giant_component_fraction: Vec<f64>,
    pub population: Vec<f64>,
}

fn windowed(exceed: &[bool], consecutive: u32) -> DetectorOutcome {
    let k = consecutive.max(1) as usize;
    let mut flags = vec![false; exceed.len()];
    let mut run = 0usize;
    for (t, &e) in exceed.iter().enumerate() {
        run = if e { run + 1 } else { 0 };
        flags[t] = run >= k;
    }
    let first_flag = flags.iter().position(|&f| f).map(|i| i as u64);
    DetectorOutcome { flags, first_flag }
}

/// Flag iteration t when the banked-harvest ratio G_t/G_{t-1} exceeds
/// (1+delta) times the population ratio for `consecutive` iterations ending
/// at t. Rows where either quantity is non-positive make the ratio
/// undefined and break the run.
pub fn detect_escape(rows: &[LogRow], delta: f64, consecutive: u32) -> DetectorOutcome {
    let mut exceed = vec![false; rows.len()];
    for t in 1..rows.len() {
        let (g0, g1) = (rows[t - 1].gfer_effective, rows[t].gfer_effective);
        let (p0, p1) = (rows[t - 1].population, rows[t].population);
        if g0 > 0.0 && g1 > 0.0 && p0 > 0.0 && p1 > 0.0 {
            exceed[t] = g1 / g0 > (1.0 + delta) * (p1 / p0);
        }
    }
    windowed(&exceed, consecutive)
}

/// Flag iteration t when the second difference of log2(G/P) exceeds
/// `threshold` for `consecutive` iterations ending at t. Geometric growth
/// has a zero second difference and never fires; super-exponential
/// per-capita growth fires at any positive threshold below its rate.
pub fn detect_runaway(rows: &[LogRow], threshold: f64, consecutive: u32) -> DetectorOutcome {
    let level = |row: &LogRow| -> Option<f64> {
        (row.gfer_effective > 0.0 && row.population > 0.0)
            .then(|| (row.gfer_effective / row.population).log2())
    };
    let mut exceed = vec![false; rows.len()];
    for t in 2..rows.len() {
        if let (Some(a), Some(b), Some(c)) =
            (level(&rows[t - 2]), level(&rows[t - 1]), level(&rows[t]))
        {
            exceed[t] = c - 2.0 * b + a > threshold;
        }
    }
    windowed(&exceed, consecutive)
}

/// Run every configured detector and extract the per-iteration series.
pub fn detect(rows: &[LogRow], cfg: &DetectorConfig) -> DetectorReport {
    DetectorReport {
        escape: cfg.escape.map(|p| detect_escape(rows, p.delta, p.consecutive)),
        runaway: cfg.runaway.map(|p| detect_runaway(rows, p.threshold, p.consecutive)),
        giant_component_fraction: rows.iter().map(|r| r.giant_component_fraction).collect(),
        population: rows.iter().map(|r| r.population).collect(),
    }
}
