//! Monte Carlo campaigns over the sequential test.
//!
//! Every trial gets its own seed derived from `(master_seed, hypothesis,
//! trial_index)`, trials run in parallel, and results are gathered in trial
//! order, so statistics never depend on scheduling or thread count.

use std::io;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::Model;
use crate::solver::PolicySolution;
use crate::testbench::{run_trial, StoppingRule, TrialError, TrialRecord};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no trial records for hypothesis {0}")]
    EmptyGroup(usize),
    #[error("threshold list is empty")]
    EmptyThresholdList,
    #[error("invalid threshold list: {0}")]
    InvalidThresholds(String),
    #[error("n_trials must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Trial(#[from] TrialError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn class(&self) -> &'static str {
        match self {
            HarnessError::EmptyGroup(_) => "EmptyGroup",
            HarnessError::EmptyThresholdList | HarnessError::InvalidThresholds(_) => {
                "EmptyThresholdList"
            }
            HarnessError::NoTrials => "UsageError",
            HarnessError::Trial(_) => "TrialError",
            HarnessError::ThreadPool(_) => "ThreadPoolError",
            HarnessError::Csv(_) => "IoError",
        }
    }
}

/// Stable 64-bit mix (splitmix64 finalizer).
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index` under true hypothesis `hypothesis`.
pub fn trial_seed(master_seed: u64, hypothesis: usize, index: usize) -> u64 {
    mix64(mix64(mix64(master_seed) ^ hypothesis as u64) ^ index as u64)
}

/// Parameters of one Monte Carlo campaign.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Experiment {
    pub rule: StoppingRule,
    pub exploration: f64,
    pub trials: usize,
    pub master_seed: u64,
    pub max_steps: u64,
}

/// Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// 95% Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: usize, n: usize) -> Interval {
    if n == 0 {
        return Interval { lo: 0.0, hi: 1.0 };
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Interval {
        lo: if successes == 0 { 0.0 } else { (center - half).max(0.0) },
        hi: if p == 1.0 { 1.0 } else { (center + half).min(1.0) },
    }
}

/// Sample mean with a 95% normal-approximation half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub n: usize,
    /// `None` when no uncensored trial is available.
    pub mean: Option<f64>,
    pub ci_half_width: Option<f64>,
}

impl MeanEstimate {
    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return MeanEstimate {
                n,
                mean: None,
                ci_half_width: None,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let half = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Z95 * (var / n as f64).sqrt()
        } else {
            0.0
        };
        MeanEstimate {
            n,
            mean: Some(mean),
            ci_half_width: Some(half),
        }
    }
}

/// Aggregated outcome of a campaign.
///
/// Censored trials are excluded from every rate: row `j` of the error matrix
/// is the empirical law of the decision among decided trials under truth `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunStats {
    pub trials_per_hypothesis: Vec<usize>,
    pub decided: Vec<usize>,
    pub censored: Vec<usize>,
    /// `error_matrix[j][i]` estimates `P_j{δ = i}`.
    pub error_matrix: Vec<Vec<f64>>,
    pub error_intervals: Vec<Vec<Interval>>,
    /// `R̂_i = max_{j≠i} error_matrix[j][i]`.
    pub risks: Vec<f64>,
    pub risk_intervals: Vec<Interval>,
    /// `max_j (1 − error_matrix[j][j])` over hypotheses with decided trials.
    pub p_max_hat: f64,
    pub p_max_interval: Interval,
    pub mean_stop_time: Vec<MeanEstimate>,
    pub mean_cost: Vec<MeanEstimate>,
    pub mean_explorations: Vec<MeanEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<Experiment>,
    /// `max R̄ / min R̄` for per-hypothesis rules.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk_ratio: Option<f64>,
}

impl RunStats {
    pub fn num_hypotheses(&self) -> usize {
        self.risks.len()
    }

    pub fn total_censored(&self) -> usize {
        self.censored.iter().sum()
    }
}

/// Aggregates trial records grouped by true hypothesis.
pub fn compute_stats(groups: &[Vec<TrialRecord>]) -> Result<RunStats, HarnessError> {
    let m = groups.len();
    if let Some(empty) = groups.iter().position(Vec::is_empty) {
        return Err(HarnessError::EmptyGroup(empty));
    }
    if m == 0 {
        return Err(HarnessError::EmptyGroup(0));
    }

    let mut counts = vec![vec![0usize; m]; m];
    let mut censored = vec![0usize; m];
    let mut stop_times = vec![Vec::new(); m];
    let mut costs = vec![Vec::new(); m];
    let mut explorations = vec![Vec::new(); m];
    for (j, group) in groups.iter().enumerate() {
        for record in group {
            match record.decision {
                Some(i) if !record.censored => {
                    counts[j][i] += 1;
                    stop_times[j].push(record.stop_time as f64);
                    costs[j].push(record.total_cost);
                    explorations[j].push(record.num_explorations as f64);
                }
                _ => censored[j] += 1,
            }
        }
    }
    let decided: Vec<usize> = counts.iter().map(|row| row.iter().sum()).collect();

    let error_matrix: Vec<Vec<f64>> = counts
        .iter()
        .zip(&decided)
        .map(|(row, &n)| {
            row.iter()
                .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                .collect()
        })
        .collect();
    let error_intervals: Vec<Vec<Interval>> = counts
        .iter()
        .zip(&decided)
        .map(|(row, &n)| row.iter().map(|&c| wilson_interval(c, n)).collect())
        .collect();

    let mut risks = vec![0.0; m];
    let mut risk_intervals = vec![Interval { lo: 0.0, hi: 0.0 }; m];
    for i in 0..m {
        if let Some(j) = (0..m)
            .filter(|&j| j != i && decided[j] > 0)
            .max_by(|&a, &b| error_matrix[a][i].total_cmp(&error_matrix[b][i]).then(b.cmp(&a)))
        {
            risks[i] = error_matrix[j][i];
            risk_intervals[i] = error_intervals[j][i];
        }
    }

    let worst = (0..m)
        .filter(|&j| decided[j] > 0)
        .map(|j| (j, decided[j] - counts[j][j]))
        .max_by(|&(a, ea), &(b, eb)| {
            let ra = ea as f64 / decided[a] as f64;
            let rb = eb as f64 / decided[b] as f64;
            ra.total_cmp(&rb).then(b.cmp(&a))
        });
    let (p_max_hat, p_max_interval) = match worst {
        Some((j, errors)) => (
            errors as f64 / decided[j] as f64,
            wilson_interval(errors, decided[j]),
        ),
        None => (0.0, Interval { lo: 0.0, hi: 1.0 }),
    };

    Ok(RunStats {
        trials_per_hypothesis: groups.iter().map(Vec::len).collect(),
        decided,
        censored,
        error_matrix,
        error_intervals,
        risks,
        risk_intervals,
        p_max_hat,
        p_max_interval,
        mean_stop_time: stop_times.iter().map(|s| MeanEstimate::from_samples(s)).collect(),
        mean_cost: costs.iter().map(|s| MeanEstimate::from_samples(s)).collect(),
        mean_explorations: explorations.iter().map(|s| MeanEstimate::from_samples(s)).collect(),
        config: None,
        risk_ratio: None,
    })
}

/// Runs `trials` trials per true hypothesis and returns the records grouped
/// by hypothesis, in trial order.
pub fn run_trials(
    model: &Model,
    solution: &PolicySolution,
    experiment: &Experiment,
) -> Result<Vec<Vec<TrialRecord>>, HarnessError> {
    if experiment.trials == 0 {
        return Err(HarnessError::NoTrials);
    }
    experiment.rule.check(Some(model.num_hypotheses()))?;
    (0..model.num_hypotheses())
        .map(|truth| {
            (0..experiment.trials)
                .into_par_iter()
                .map(|index| {
                    run_trial(
                        model,
                        truth,
                        &experiment.rule,
                        solution,
                        experiment.exploration,
                        trial_seed(experiment.master_seed, truth, index),
                        experiment.max_steps,
                    )
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(HarnessError::from)
        })
        .collect()
}

/// Runs a campaign on the global thread pool.
pub fn run_experiment(
    model: &Model,
    solution: &PolicySolution,
    experiment: &Experiment,
) -> Result<RunStats, HarnessError> {
    let groups = run_trials(model, solution, experiment)?;
    let mut stats = compute_stats(&groups)?;
    stats.config = Some(experiment.clone());
    if let StoppingRule::PerHypothesis(risks) = &experiment.rule {
        let max = risks.iter().copied().fold(f64::MIN, f64::max);
        let min = risks.iter().copied().fold(f64::MAX, f64::min);
        stats.risk_ratio = Some(max / min);
    }
    Ok(stats)
}

/// Runs a campaign on a dedicated pool of `threads` workers.
pub fn run_experiment_with_threads(
    model: &Model,
    solution: &PolicySolution,
    experiment: &Experiment,
    threads: usize,
) -> Result<RunStats, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
    pool.install(|| run_experiment(model, solution, experiment))
}

/// One `(hypothesis, threshold)` line of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub hypothesis: usize,
    pub threshold: f64,
    pub trials: usize,
    pub censored: usize,
    #[serde(rename = "mean_N")]
    pub mean_n: Option<f64>,
    #[serde(rename = "ci_N")]
    pub ci_n: Option<f64>,
    pub mean_cost: Option<f64>,
    pub ci_cost: Option<f64>,
    pub p_max_hat: f64,
    /// Empirical risk of deciding this hypothesis.
    pub risk_decided: f64,
    /// `mean_cost · d*_i / ln T`; tends to 1 for an asymptotically optimal test.
    pub slope_normalized: Option<f64>,
}

/// Per-hypothesis rows for one campaign. `thresholds[i]` is the likelihood
/// ratio threshold used when deciding `i`.
pub fn sweep_rows(stats: &RunStats, solution: &PolicySolution, thresholds: &[f64]) -> Vec<SweepRow> {
    (0..stats.num_hypotheses())
        .map(|i| {
            let cost = stats.mean_cost[i];
            SweepRow {
                hypothesis: i,
                threshold: thresholds[i],
                trials: stats.trials_per_hypothesis[i],
                censored: stats.censored[i],
                mean_n: stats.mean_stop_time[i].mean,
                ci_n: stats.mean_stop_time[i].ci_half_width,
                mean_cost: cost.mean,
                ci_cost: cost.ci_half_width,
                p_max_hat: stats.p_max_hat,
                risk_decided: stats.risks[i],
                slope_normalized: cost.mean.map(|c| c * solution.d_star(i) / thresholds[i].ln()),
            }
        })
        .collect()
}

/// Result of a threshold sweep: one row per hypothesis and threshold,
/// threshold-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub thresholds: Vec<f64>,
    pub exploration: f64,
    pub trials: usize,
    pub master_seed: u64,
    pub max_steps: u64,
}

impl SweepTable {
    /// Rows for one hypothesis, in increasing threshold order.
    pub fn for_hypothesis(&self, hypothesis: usize) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.hypothesis == hypothesis).collect()
    }

    /// Writes the CSV table with its header row.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), HarnessError> {
        write_rows_csv(&self.rows, writer)
    }
}

/// CSV with columns `hypothesis,threshold,trials,censored,mean_N,ci_N,
/// mean_cost,ci_cost,p_max_hat,risk_decided,slope_normalized`.
pub fn write_rows_csv<W: io::Write>(rows: &[SweepRow], writer: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(writer);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Runs a single-threshold campaign per threshold. All thresholds share the
/// same per-trial seeds, so each trial follows the same trajectory and only
/// its stopping point moves.
pub fn threshold_sweep(
    model: &Model,
    solution: &PolicySolution,
    thresholds: &[f64],
    exploration: f64,
    trials: usize,
    master_seed: u64,
    max_steps: u64,
) -> Result<SweepTable, HarnessError> {
    if thresholds.is_empty() {
        return Err(HarnessError::EmptyThresholdList);
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 1.0) || !t.is_finite()) {
        return Err(HarnessError::InvalidThresholds(format!("threshold {t} must exceed 1")));
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HarnessError::InvalidThresholds(
            "thresholds must be strictly increasing".into(),
        ));
    }
    let mut rows = Vec::with_capacity(thresholds.len() * model.num_hypotheses());
    for &threshold in thresholds {
        let experiment = Experiment {
            rule: StoppingRule::SingleThreshold(threshold),
            exploration,
            trials,
            master_seed,
            max_steps,
        };
        let stats = run_experiment(model, solution, &experiment)?;
        rows.extend(sweep_rows(&stats, solution, &vec![threshold; model.num_hypotheses()]));
    }
    Ok(SweepTable {
        rows,
        thresholds: thresholds.to_vec(),
        exploration,
        trials,
        master_seed,
        max_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(decision: Option<usize>) -> TrialRecord {
        TrialRecord {
            stop_time: 10,
            decision,
            total_cost: 10.0,
            num_explorations: 3,
            last_ml_error_time: 0,
            censored: decision.is_none(),
        }
    }

    fn group(decisions: &[(usize, usize)]) -> Vec<TrialRecord> {
        decisions
            .iter()
            .flat_map(|&(d, count)| std::iter::repeat_n(record(Some(d)), count))
            .collect()
    }

    #[test]
    fn risk_is_column_max() {
        let groups = vec![
            group(&[(0, 100)]),
            group(&[(0, 3), (1, 97)]),
            group(&[(0, 1), (2, 99)]),
        ];
        let stats = compute_stats(&groups).unwrap();
        assert!((stats.risks[0] - 0.03).abs() < 1e-15);
        assert_eq!(stats.risks[1], 0.0);
        assert!((stats.p_max_hat - 0.03).abs() < 1e-15);
    }

    #[test]
    fn perfect_decisions() {
        let groups = vec![group(&[(0, 50)]), group(&[(1, 50)]), group(&[(2, 50)])];
        let stats = compute_stats(&groups).unwrap();
        assert_eq!(stats.p_max_hat, 0.0);
        assert_eq!(stats.risks, vec![0.0; 3]);
        assert_eq!(stats.error_matrix[1][1], 1.0);
    }

    #[test]
    fn binary_risks_and_p_max() {
        let groups = vec![group(&[(0, 98), (1, 2)]), group(&[(0, 5), (1, 95)])];
        let stats = compute_stats(&groups).unwrap();
        assert!((stats.p_max_hat - 0.05).abs() < 1e-15);
        assert!((stats.risks[0] - 0.05).abs() < 1e-15);
        assert!((stats.risks[1] - 0.02).abs() < 1e-15);
        assert!(stats.risks.iter().all(|r| *r <= stats.p_max_hat));
    }

    #[test]
    fn censored_trials_are_counted_not_decided() {
        let mut g0 = group(&[(0, 9)]);
        g0.push(record(None));
        let groups = vec![g0, group(&[(1, 10)])];
        let stats = compute_stats(&groups).unwrap();
        assert_eq!(stats.censored, vec![1, 0]);
        assert_eq!(stats.decided, vec![9, 10]);
        assert_eq!(stats.error_matrix[0][0], 1.0);
        assert_eq!(stats.mean_stop_time[0].n, 9);
    }

    #[test]
    fn empty_group_is_an_error() {
        let groups = vec![group(&[(0, 3)]), vec![]];
        assert!(matches!(compute_stats(&groups), Err(HarnessError::EmptyGroup(1))));
    }

    #[test]
    fn wilson_interval_brackets_estimate() {
        let ci = wilson_interval(2, 100);
        assert!(ci.lo < 0.02 && 0.02 < ci.hi);
        let zero = wilson_interval(0, 100);
        assert_eq!(zero.lo, 0.0);
        assert!(zero.hi > 0.0 && zero.hi < 0.05);
        // Reference value for 0/100: z² / (n + z²) ≈ 0.036994.
        assert!((zero.hi - 0.036_994).abs() < 1e-5);
    }

    #[test]
    fn seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for h in 0..3 {
            for t in 0..1000 {
                assert!(seen.insert(trial_seed(7, h, t)));
            }
        }
        assert_ne!(trial_seed(7, 0, 0), trial_seed(8, 0, 0));
    }
}
