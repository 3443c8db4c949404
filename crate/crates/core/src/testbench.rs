//! Stopping rules and single-trial execution of the sequential test.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    ml_estimate, next_control, observe_update, sample_index, ControllerError, ControllerState,
};
use crate::model::Model;
use crate::solver::PolicySolution;

/// Default step cap for a single trial.
pub const DEFAULT_MAX_STEPS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrialError {
    #[error("invalid stopping rule: {0}")]
    InvalidRule(String),
    #[error("true hypothesis {hypothesis} out of range ({num_hypotheses} hypotheses)")]
    HypothesisOutOfRange {
        hypothesis: usize,
        num_hypotheses: usize,
    },
    #[error("policy solution does not match the model's alphabets")]
    SolutionMismatch,
    #[error("max_steps must be at least 1")]
    InvalidMaxSteps,
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// When to stop and decide for the ML hypothesis `î`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingRule {
    /// Stop once `L_î − max_{j≠î} L_j > ln T`.
    SingleThreshold(f64),
    /// Stop once `L_î − max_{j≠î} L_j > −ln R̄_î`: per-identity risk targets.
    PerHypothesis(Vec<f64>),
}

impl StoppingRule {
    pub fn single_threshold(threshold: f64) -> Result<Self, TrialError> {
        let rule = StoppingRule::SingleThreshold(threshold);
        rule.check(None)?;
        Ok(rule)
    }

    pub fn per_hypothesis(risks: Vec<f64>) -> Result<Self, TrialError> {
        let rule = StoppingRule::PerHypothesis(risks);
        rule.check(None)?;
        Ok(rule)
    }

    /// Checks parameter ranges and, when given, the number of hypotheses.
    pub fn check(&self, num_hypotheses: Option<usize>) -> Result<(), TrialError> {
        match self {
            StoppingRule::SingleThreshold(t) => {
                if !(*t > 1.0) || !t.is_finite() {
                    return Err(TrialError::InvalidRule(format!("threshold must exceed 1, got {t}")));
                }
            }
            StoppingRule::PerHypothesis(risks) => {
                if let Some((i, r)) = risks.iter().enumerate().find(|(_, r)| !(**r > 0.0 && **r < 1.0)) {
                    return Err(TrialError::InvalidRule(format!(
                        "risk constraint {i} must lie in (0, 1), got {r}"
                    )));
                }
                if let Some(m) = num_hypotheses {
                    if risks.len() != m {
                        return Err(TrialError::InvalidRule(format!(
                            "expected {m} risk constraints, got {}",
                            risks.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Log-likelihood gap needed to decide for `hypothesis`.
    pub fn log_threshold(&self, hypothesis: usize) -> f64 {
        match self {
            StoppingRule::SingleThreshold(t) => t.ln(),
            StoppingRule::PerHypothesis(risks) => -risks[hypothesis].ln(),
        }
    }

    /// Likelihood-ratio threshold for deciding `hypothesis`.
    pub fn threshold(&self, hypothesis: usize) -> f64 {
        match self {
            StoppingRule::SingleThreshold(t) => *t,
            StoppingRule::PerHypothesis(risks) => 1.0 / risks[hypothesis],
        }
    }
}

/// Gap between the ML log-likelihood and the runner-up.
pub fn ml_gap(loglik: &[f64]) -> (usize, f64) {
    let best = ml_estimate(loglik);
    let runner_up = loglik
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != best)
        .map(|(_, l)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    (best, loglik[best] - runner_up)
}

/// The decision `î` if the rule says stop, `None` to keep sampling.
pub fn should_stop(loglik: &[f64], rule: &StoppingRule) -> Option<usize> {
    let (best, gap) = ml_gap(loglik);
    (gap > rule.log_threshold(best)).then_some(best)
}

/// Outcome of one sequential test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    /// Number of observations `N`; equals the step cap when censored.
    pub stop_time: u64,
    pub decision: Option<usize>,
    pub total_cost: f64,
    pub num_explorations: u64,
    /// Last `k < N` whose ML estimate differed from the truth, 0 if none.
    pub last_ml_error_time: u64,
    pub censored: bool,
}

/// One step of a trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub time: u64,
    pub control: usize,
    pub explored: bool,
    /// Probability the controller gave the chosen control.
    pub control_probability: f64,
    pub observation: usize,
    /// ML estimate after this observation.
    pub ml_estimate: usize,
}

/// A sequential test in progress under a fixed true hypothesis.
///
/// Each step consumes exactly two draws from the trial stream: one for the
/// control and one for the observation.
#[derive(Debug, Clone)]
pub struct Trial<'a> {
    model: &'a Model,
    solution: &'a PolicySolution,
    truth: usize,
    state: ControllerState,
    total_cost: f64,
    explorations: u64,
}

impl<'a> Trial<'a> {
    pub fn new(
        model: &'a Model,
        solution: &'a PolicySolution,
        truth: usize,
        exploration: f64,
        seed: u64,
    ) -> Result<Self, TrialError> {
        if truth >= model.num_hypotheses() {
            return Err(TrialError::HypothesisOutOfRange {
                hypothesis: truth,
                num_hypotheses: model.num_hypotheses(),
            });
        }
        if !solution.matches(model) {
            return Err(TrialError::SolutionMismatch);
        }
        Ok(Trial {
            model,
            solution,
            truth,
            state: ControllerState::new(model, exploration, seed)?,
            total_cost: 0.0,
            explorations: 0,
        })
    }

    pub fn step(&mut self) -> StepRecord {
        let decision = next_control(&mut self.state, self.solution);
        let draw = self.state.draw();
        let row = self
            .model
            .kernel_row(self.truth, decision.control, self.state.prev_obs());
        let observation = sample_index(row, draw);
        observe_update(&mut self.state, decision.control, observation, self.model);
        self.total_cost += self.model.cost(decision.control);
        self.explorations += u64::from(decision.explored);
        StepRecord {
            time: self.state.time(),
            control: decision.control,
            explored: decision.explored,
            control_probability: decision.probability,
            observation,
            ml_estimate: self.state.ml_estimate(),
        }
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn explorations(&self) -> u64 {
        self.explorations
    }

    pub fn truth(&self) -> usize {
        self.truth
    }
}

/// Runs the complete test until the rule stops it or `max_steps` is reached.
pub fn run_trial(
    model: &Model,
    truth: usize,
    rule: &StoppingRule,
    solution: &PolicySolution,
    exploration: f64,
    seed: u64,
    max_steps: u64,
) -> Result<TrialRecord, TrialError> {
    rule.check(Some(model.num_hypotheses()))?;
    if max_steps == 0 {
        return Err(TrialError::InvalidMaxSteps);
    }
    let mut trial = Trial::new(model, solution, truth, exploration, seed)?;
    let mut last_ml_error_time = 0;
    loop {
        let step = trial.step();
        if let Some(decision) = should_stop(trial.state().loglik(), rule) {
            return Ok(TrialRecord {
                stop_time: step.time,
                decision: Some(decision),
                total_cost: trial.total_cost(),
                num_explorations: trial.explorations(),
                last_ml_error_time,
                censored: false,
            });
        }
        if step.time >= max_steps {
            return Ok(TrialRecord {
                stop_time: step.time,
                decision: None,
                total_cost: trial.total_cost(),
                num_explorations: trial.explorations(),
                last_ml_error_time,
                censored: true,
            });
        }
        if step.ml_estimate != truth {
            last_ml_error_time = step.time;
        }
    }
}

/// Summary of a long run that never stops.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnstoppedRun {
    pub truth: usize,
    pub steps: u64,
    pub burn_in: u64,
    /// Steps after burn-in whose ML estimate equalled the truth.
    pub ml_correct_after_burn_in: u64,
    pub num_explorations: u64,
    pub total_cost: f64,
    pub loglik: Vec<f64>,
}

impl UnstoppedRun {
    pub fn ml_correct_fraction(&self) -> f64 {
        self.ml_correct_after_burn_in as f64 / (self.steps - self.burn_in) as f64
    }

    /// `min_{j≠i} (L_i − L_j) / Σ_k c(u_k)`: the realized cost-normalized reward.
    pub fn running_reward(&self) -> f64 {
        let li = self.loglik[self.truth];
        let worst = self
            .loglik
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != self.truth)
            .map(|(_, lj)| li - lj)
            .fold(f64::INFINITY, f64::min);
        worst / self.total_cost
    }
}

/// Runs the controller for exactly `steps` steps without a stopping rule.
pub fn run_unstopped(
    model: &Model,
    truth: usize,
    solution: &PolicySolution,
    exploration: f64,
    seed: u64,
    steps: u64,
    burn_in: u64,
) -> Result<UnstoppedRun, TrialError> {
    if steps == 0 || burn_in >= steps {
        return Err(TrialError::InvalidMaxSteps);
    }
    let mut trial = Trial::new(model, solution, truth, exploration, seed)?;
    let mut correct = 0;
    for _ in 0..steps {
        let step = trial.step();
        if step.time > burn_in && step.ml_estimate == truth {
            correct += 1;
        }
    }
    Ok(UnstoppedRun {
        truth,
        steps,
        burn_in,
        ml_correct_after_burn_in: correct,
        num_explorations: trial.explorations(),
        total_cost: trial.total_cost(),
        loglik: trial.state().loglik().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_model, ObservationRef, RawModel};

    #[test]
    fn single_threshold_examples() {
        let rule = StoppingRule::single_threshold(100.0).unwrap();
        assert_eq!(should_stop(&[10.0, 4.0, 3.0], &rule), Some(0));
        assert_eq!(should_stop(&[5.0, 4.0, 3.0], &rule), None);
    }

    #[test]
    fn per_hypothesis_examples() {
        let rule = StoppingRule::per_hypothesis(vec![0.01, 0.1, 0.1]).unwrap();
        assert_eq!(should_stop(&[4.0, 8.0, 3.0], &rule), Some(1));
        let strict = StoppingRule::per_hypothesis(vec![0.1, 0.01, 0.1]).unwrap();
        assert_eq!(should_stop(&[4.0, 6.0, 3.0], &strict), None);
    }

    #[test]
    fn threshold_comparison_is_strict() {
        let rule = StoppingRule::SingleThreshold(std::f64::consts::E);
        assert_eq!(should_stop(&[1.0, 0.0], &rule), None);
        assert_eq!(should_stop(&[1.0 + 1e-12, 0.0], &rule), Some(0));
    }

    #[test]
    fn rule_validation() {
        assert!(StoppingRule::single_threshold(1.0).is_err());
        assert!(StoppingRule::single_threshold(f64::INFINITY).is_err());
        assert!(StoppingRule::per_hypothesis(vec![0.5, 1.0]).is_err());
        assert!(StoppingRule::per_hypothesis(vec![0.0, 0.5]).is_err());
        let rule = StoppingRule::per_hypothesis(vec![0.1, 0.2]).unwrap();
        assert!(rule.check(Some(3)).is_err());
        assert!(rule.check(Some(2)).is_ok());
    }

    fn single_control_model(p0: [f64; 2], p1: [f64; 2]) -> Model {
        validate_model(&RawModel {
            num_hypotheses: 2,
            observations: vec!["a".into(), "b".into()],
            controls: vec!["u".into()],
            y0: Some(ObservationRef::Index(0)),
            costs: vec![1.0],
            kernels: vec![
                vec![vec![p0.to_vec(), p0.to_vec()]],
                vec![vec![p1.to_vec(), p1.to_vec()]],
            ],
        })
        .unwrap()
    }

    #[test]
    fn indistinguishable_hypotheses_are_censored() {
        let model = single_control_model([0.3, 0.7], [0.3, 0.7]);
        let solution = PolicySolution::solve(&model).unwrap();
        let rule = StoppingRule::single_threshold(10.0).unwrap();
        let record = run_trial(&model, 1, &rule, &solution, 1.3, 5, 1000).unwrap();
        assert!(record.censored);
        assert_eq!(record.decision, None);
        assert_eq!(record.stop_time, 1000);
        assert_eq!(record.total_cost, 1000.0);
    }

    #[test]
    fn near_one_threshold_stops_after_one_step() {
        let model = single_control_model([0.9, 0.1], [0.5, 0.5]);
        let solution = PolicySolution::solve(&model).unwrap();
        let rule = StoppingRule::single_threshold(1.0001).unwrap();
        for truth in 0..2 {
            for seed in 0..200 {
                let record = run_trial(&model, truth, &rule, &solution, 1.3, seed, 10).unwrap();
                assert_eq!(record.stop_time, 1);
                assert_eq!(record.total_cost, 1.0);
            }
        }
    }

    #[test]
    fn trials_are_deterministic() {
        let model = single_control_model([0.6, 0.4], [0.4, 0.6]);
        let solution = PolicySolution::solve(&model).unwrap();
        let rule = StoppingRule::single_threshold(50.0).unwrap();
        let a = run_trial(&model, 0, &rule, &solution, 1.3, 99, 10_000).unwrap();
        let b = run_trial(&model, 0, &rule, &solution, 1.3, 99, 10_000).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_solution_is_rejected() {
        let model = single_control_model([0.6, 0.4], [0.4, 0.6]);
        let other = validate_model(&RawModel {
            num_hypotheses: 2,
            observations: vec!["a".into(), "b".into()],
            controls: vec!["u".into(), "v".into()],
            y0: None,
            costs: vec![1.0, 1.0],
            kernels: vec![vec![vec![vec![0.5, 0.5]; 2]; 2], vec![vec![vec![0.4, 0.6]; 2]; 2]],
        })
        .unwrap();
        let solution = PolicySolution::solve(&other).unwrap();
        let rule = StoppingRule::single_threshold(10.0).unwrap();
        assert_eq!(
            run_trial(&model, 0, &rule, &solution, 1.3, 1, 10).unwrap_err(),
            TrialError::SolutionMismatch
        );
    }
}
