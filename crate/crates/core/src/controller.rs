//! Self-tuning causal control policy.
//!
//! At step `k` the controller forms the maximum-likelihood estimate `î` from
//! the log-likelihoods accumulated over the first `k − 1` observations and
//! samples the control from `q*_î(· | y_{k−1})`. At the sparse exploration
//! times `k = ⌈a^ℓ⌉, ℓ = 0, 1, …` it instead draws the control uniformly.
//!
//! Only the hypothesis-dependent factors `p_i^{u_k}(y_k | y_{k−1})` of the
//! joint law of observations and controls are tracked: the control-policy
//! factors are shared by every hypothesis and cancel in every likelihood ratio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::Model;
use crate::solver::PolicySolution;

/// Default exploration base `a`.
pub const DEFAULT_EXPLORATION: f64 = 1.3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("exploration base must be a finite number > 1, got {0}")]
    InvalidExploration(f64),
}

/// Whether `k = ⌈a^ℓ⌉` for some integer `ℓ ≥ 0`.
pub fn is_exploration_time(k: u64, a: f64) -> bool {
    assert!(a > 1.0 && a.is_finite(), "exploration base must exceed 1");
    let target = k as f64;
    let mut ell = 0i32;
    loop {
        let power = a.powi(ell);
        if power > target {
            return false;
        }
        if power.ceil() == target {
            return true;
        }
        ell += 1;
    }
}

/// The exploration times `⌈a^ℓ⌉` in increasing order, without repeats.
#[derive(Debug, Clone)]
pub struct ExplorationSchedule {
    base: f64,
    ell: i32,
    last: u64,
}

impl ExplorationSchedule {
    pub fn new(base: f64) -> Result<Self, ControllerError> {
        if !(base > 1.0 && base.is_finite()) {
            return Err(ControllerError::InvalidExploration(base));
        }
        Ok(ExplorationSchedule {
            base,
            ell: 0,
            last: 0,
        })
    }

    pub fn base(&self) -> f64 {
        self.base
    }
}

impl Iterator for ExplorationSchedule {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        loop {
            let power = self.base.powi(self.ell);
            if !power.is_finite() || power >= u64::MAX as f64 {
                return None;
            }
            self.ell += 1;
            let time = power.ceil() as u64;
            if time > self.last {
                self.last = time;
                return Some(time);
            }
        }
    }
}

/// Index of the largest log-likelihood; ties go to the lowest index.
pub fn ml_estimate(loglik: &[f64]) -> usize {
    let mut best = 0;
    for (i, &value) in loglik.iter().enumerate().skip(1) {
        if value > loglik[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF sampling: the first index whose cumulative probability
/// exceeds `draw ∈ [0, 1)`. Zero-probability entries are never chosen.
pub fn sample_index(probs: &[f64], draw: f64) -> usize {
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cumulative += p;
        last_positive = i;
        if draw < cumulative {
            return i;
        }
    }
    last_positive
}

/// Per-trial controller state.
#[derive(Debug, Clone)]
pub struct ControllerState {
    time: u64,
    prev_obs: usize,
    loglik: Vec<f64>,
    schedule: ExplorationSchedule,
    next_exploration: Option<u64>,
    rng: ChaCha8Rng,
}

/// A chosen control and how it was chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlDecision {
    pub control: usize,
    pub explored: bool,
    /// Probability the policy assigned to `control` at this step.
    pub probability: f64,
}

impl ControllerState {
    pub fn new(model: &Model, exploration: f64, seed: u64) -> Result<Self, ControllerError> {
        let mut schedule = ExplorationSchedule::new(exploration)?;
        let next_exploration = schedule.next();
        Ok(ControllerState {
            time: 0,
            prev_obs: model.y0(),
            loglik: vec![0.0; model.num_hypotheses()],
            schedule,
            next_exploration,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Number of observations made so far.
    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn prev_obs(&self) -> usize {
        self.prev_obs
    }

    /// `L_i = Σ_k ln p_i^{u_k}(y_k | y_{k−1})`.
    pub fn loglik(&self) -> &[f64] {
        &self.loglik
    }

    pub fn exploration(&self) -> f64 {
        self.schedule.base()
    }

    /// Current ML estimate.
    pub fn ml_estimate(&self) -> usize {
        ml_estimate(&self.loglik)
    }

    /// One uniform draw in `[0, 1)` from the trial's stream.
    pub fn draw(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    fn take_exploration(&mut self, step: u64) -> bool {
        match self.next_exploration {
            Some(t) if t == step => {
                self.next_exploration = self.schedule.next();
                true
            }
            _ => false,
        }
    }
}

/// Chooses the control for step `time + 1`. Consumes exactly one draw.
pub fn next_control(state: &mut ControllerState, solution: &PolicySolution) -> ControlDecision {
    let step = state.time + 1;
    let draw = state.draw();
    if state.take_exploration(step) {
        let nu = solution.policy(0).q_star.num_controls();
        let uniform = vec![1.0 / nu as f64; nu];
        ControlDecision {
            control: sample_index(&uniform, draw),
            explored: true,
            probability: 1.0 / nu as f64,
        }
    } else {
        let rule = solution.control_rule(state.ml_estimate(), state.prev_obs);
        let control = sample_index(rule, draw);
        ControlDecision {
            control,
            explored: false,
            probability: rule[control],
        }
    }
}

/// Accumulates `ln p_i^u(y | prev)` for every hypothesis and advances time.
pub fn observe_update(state: &mut ControllerState, control: usize, observation: usize, model: &Model) {
    let prev = state.prev_obs;
    for (i, l) in state.loglik.iter_mut().enumerate() {
        *l += model.log_prob(i, control, prev, observation);
    }
    state.prev_obs = observation;
    state.time += 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::ConditionalPolicy;
    use crate::model::{validate_model, ObservationRef, RawModel};
    use crate::solver::{solve_policy, HypothesisPolicy, PolicySolution};

    fn two_hypothesis_model() -> Model {
        validate_model(&RawModel {
            num_hypotheses: 2,
            observations: vec!["a".into(), "b".into()],
            controls: vec!["u".into()],
            y0: Some(ObservationRef::Index(0)),
            costs: vec![1.0],
            kernels: vec![
                vec![vec![vec![0.9, 0.1], vec![0.9, 0.1]]],
                vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]],
            ],
        })
        .unwrap()
    }

    #[test]
    fn powers_of_two() {
        for k in [1, 2, 4, 8, 16] {
            assert!(is_exploration_time(k, 2.0), "{k}");
        }
        for k in [3, 5, 6, 7, 9, 15, 17] {
            assert!(!is_exploration_time(k, 2.0), "{k}");
        }
    }

    #[test]
    fn base_one_point_two_deduplicates() {
        // ⌈1.2^ℓ⌉ for ℓ = 0..=10: 1, 2, 2, 2, 3, 3, 3, 4, 5, 6, 7.
        let expected = [1u64, 2, 3, 4, 5, 6, 7];
        let times: Vec<u64> = ExplorationSchedule::new(1.2).unwrap().take(7).collect();
        assert_eq!(times, expected);
        assert!(is_exploration_time(2, 1.2));
    }

    #[test]
    fn first_step_always_explores() {
        for a in [1.01, 1.3, 2.0, 7.5] {
            assert!(is_exploration_time(1, a));
        }
    }

    #[test]
    fn schedule_agrees_with_predicate() {
        for a in [1.05, 1.2, 1.3, 1.5, 2.0, 3.7] {
            let times: Vec<u64> = ExplorationSchedule::new(a)
                .unwrap()
                .take_while(|&t| t <= 5000)
                .collect();
            let brute: Vec<u64> = (1..=5000).filter(|&k| is_exploration_time(k, a)).collect();
            assert_eq!(times, brute, "a = {a}");
        }
    }

    #[test]
    fn invalid_base_is_rejected() {
        assert!(ExplorationSchedule::new(1.0).is_err());
        assert!(ExplorationSchedule::new(f64::NAN).is_err());
    }

    #[test]
    fn ml_tie_break() {
        assert_eq!(ml_estimate(&[1.0, 3.0, 2.0]), 1);
        assert_eq!(ml_estimate(&[2.0, 2.0, 1.0]), 0);
        assert_eq!(ml_estimate(&[0.0, 0.0, 0.0]), 0);
    }

    #[test]
    fn inverse_cdf_sampling() {
        let uniform = [1.0 / 3.0; 3];
        assert_eq!(sample_index(&uniform, 0.5), 1);
        assert_eq!(sample_index(&uniform, 0.0), 0);
        assert_eq!(sample_index(&uniform, 0.999_999), 2);
        assert_eq!(sample_index(&[0.25, 0.75], 0.2), 0);
        assert_eq!(sample_index(&[0.25, 0.75], 0.25), 1);
        assert_eq!(sample_index(&[1.0, 0.0, 0.0], 0.99), 0);
        assert_eq!(sample_index(&[0.0, 0.5, 0.5], 0.0), 1);
    }

    #[test]
    fn exploit_point_mass_ignores_draw() {
        let model = validate_model(&RawModel {
            num_hypotheses: 2,
            observations: vec!["a".into(), "b".into()],
            controls: vec!["alpha".into(), "beta".into(), "gamma".into()],
            y0: None,
            costs: vec![1.0; 3],
            kernels: vec![vec![vec![vec![0.5, 0.5]; 2]; 3]; 2],
        })
        .unwrap();
        let mut policies: Vec<HypothesisPolicy> =
            (0..2).map(|i| solve_policy(&model, i).unwrap()).collect();
        for p in &mut policies {
            p.q_star = ConditionalPolicy::constant(2, 3, 0);
        }
        let solution = PolicySolution::from_policies(policies);
        let mut state = ControllerState::new(&model, 2.0, 11).unwrap();
        let mut exploit_steps = 0;
        for _ in 0..64 {
            let step = state.time() + 1;
            let decision = next_control(&mut state, &solution);
            assert_eq!(decision.explored, is_exploration_time(step, 2.0));
            if !decision.explored {
                assert_eq!(decision.control, 0);
                assert_eq!(decision.probability, 1.0);
                exploit_steps += 1;
            }
            observe_update(&mut state, decision.control, 0, &model);
        }
        assert_eq!(exploit_steps, 64 - 7);
    }

    #[test]
    fn update_accumulates_log_factors() {
        let model = two_hypothesis_model();
        let mut state = ControllerState::new(&model, 1.3, 0).unwrap();
        observe_update(&mut state, 0, 0, &model);
        assert_eq!(state.loglik(), &[0.9f64.ln(), 0.5f64.ln()]);
        let gap = state.loglik()[0] - state.loglik()[1];
        assert!((gap - 1.8f64.ln()).abs() < 1e-15);
        assert!((gap - 0.587_786_664_902_119).abs() < 1e-12);
        assert_eq!(state.time(), 1);
        assert_eq!(state.prev_obs(), 0);
    }

    #[test]
    fn successive_updates_match_batch_sum() {
        let model = two_hypothesis_model();
        let mut state = ControllerState::new(&model, 1.3, 0).unwrap();
        let path = [1usize, 0, 0, 1, 1, 0, 1];
        let mut prev = model.y0();
        let mut batch = [0.0f64; 2];
        for &y in &path {
            observe_update(&mut state, 0, y, &model);
            for (i, b) in batch.iter_mut().enumerate() {
                *b += model.prob(i, 0, prev, y).ln();
            }
            prev = y;
        }
        for i in 0..2 {
            assert!((state.loglik()[i] - batch[i]).abs() <= 1e-12);
        }
    }
}
