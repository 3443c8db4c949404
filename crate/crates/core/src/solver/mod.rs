//! Optimal sensing policies.
//!
//! For each hypothesis `i` we want the stationary control rule `q(u | ỹ)`
//! maximizing the cost-normalized inferential reward
//!
//! ```text
//!            min_{j≠i} Σ_{ỹ,u} μ_i^q(ỹ) q(u|ỹ) D(p_i^u(·|ỹ) ‖ p_j^u(·|ỹ))
//!   r_i(q) = ------------------------------------------------------------
//!                       Σ_{ỹ,u} μ_i^q(ỹ) q(u|ỹ) c(u)
//! ```
//!
//! where `μ_i^q` is the stationary law of the mixed kernel `p_i^q`. Writing
//! `t(ỹ, u) = μ_i^q(ỹ) q(u|ỹ) / Σ μ q c` turns this linear-fractional program
//! over occupation measures into a linear program:
//!
//! ```text
//!   maximize z
//!   s.t. Σ_u t(y,u) = Σ_{ỹ,u} t(ỹ,u) p_i^u(y|ỹ)         for every y
//!        Σ_{ỹ,u} t(ỹ,u) D(p_i^u(·|ỹ) ‖ p_j^u(·|ỹ)) ≥ z   for every j ≠ i
//!        Σ_{ỹ,u} t(ỹ,u) c(u) = 1,   t ≥ 0
//! ```
//!
//! which [`solve_policy`] hands to the dense simplex in [`simplex`].
//! [`brute_force_policy`] is an independent grid-search oracle over policies.

pub mod simplex;

use serde::Serialize;
use thiserror::Error;

use crate::divergence::{
    kl_divergence, mixed_kernel, stationary_distribution, ConditionalPolicy, DivergenceError,
};
use crate::model::Model;
use simplex::{LpError, StandardLp};

/// Residual tolerance on flow balance and cost normalization.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
/// Occupation rows with at most this mass map to the uniform control rule.
pub const ZERO_ROW_MASS: f64 = 1e-12;
/// Upper bound on the number of grid points [`brute_force_policy`] visits.
pub const MAX_GRID_EVALUATIONS: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("hypothesis {hypothesis} out of range for a model with {num_hypotheses} hypotheses")]
    HypothesisOutOfRange {
        hypothesis: usize,
        num_hypotheses: usize,
    },
    #[error("occupation-measure program infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure: flow residual {flow:e}, cost residual {cost:e} ({detail})")]
    NumericalFailure {
        flow: f64,
        cost: f64,
        detail: String,
    },
    #[error("grid of {evaluations} policies exceeds the {MAX_GRID_EVALUATIONS} limit")]
    GridTooLarge { evaluations: u128 },
    #[error("grid_steps must be at least 1")]
    InvalidGrid,
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
}

impl SolverError {
    pub fn class(&self) -> &'static str {
        match self {
            SolverError::HypothesisOutOfRange { .. } => "HypothesisOutOfRange",
            SolverError::Infeasible(_) => "Infeasible",
            SolverError::NumericalFailure { .. } => "NumericalFailure",
            SolverError::GridTooLarge { .. } => "GridTooLarge",
            SolverError::InvalidGrid => "InvalidGrid",
            SolverError::Divergence(_) => "DivergenceError",
        }
    }
}

/// Normalized long-run frequencies `t(ỹ, u)` of (previous observation, control) pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct OccupationMeasure {
    t: Vec<Vec<f64>>,
}

impl OccupationMeasure {
    /// Rows are indexed by previous observation, columns by control.
    pub fn new(t: Vec<Vec<f64>>) -> Self {
        OccupationMeasure { t }
    }

    /// Occupation induced by a stationary policy: `t = μ q`, unscaled.
    pub fn from_policy(mu: &[f64], policy: &ConditionalPolicy) -> Self {
        let t = policy
            .rows()
            .zip(mu)
            .map(|(row, m)| row.iter().map(|q| m * q).collect())
            .collect();
        OccupationMeasure { t }
    }

    pub fn get(&self, prev: usize, control: usize) -> f64 {
        self.t[prev][control]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.t
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.t.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.row_sums().iter().sum()
    }

    /// `Σ_ỹ t(ỹ, u)` for each control.
    pub fn control_marginal(&self) -> Vec<f64> {
        let nu = self.t.first().map_or(0, Vec::len);
        (0..nu).map(|u| self.t.iter().map(|r| r[u]).sum()).collect()
    }

    /// `max_y |Σ_u t(y,u) − Σ_{ỹ,u} t(ỹ,u) p_i^u(y|ỹ)|`.
    pub fn flow_residual(&self, model: &Model, hypothesis: usize) -> f64 {
        let ny = model.num_observations();
        (0..ny)
            .map(|y| {
                let outflow: f64 = self.t[y].iter().sum();
                let inflow: f64 = self
                    .t
                    .iter()
                    .enumerate()
                    .flat_map(|(prev, row)| {
                        row.iter()
                            .enumerate()
                            .map(move |(u, mass)| mass * model.prob(hypothesis, u, prev, y))
                    })
                    .sum();
                (outflow - inflow).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `|Σ t(ỹ,u) c(u) − 1|`.
    pub fn cost_residual(&self, model: &Model) -> f64 {
        (self.expected_cost(model) - 1.0).abs()
    }

    fn expected_cost(&self, model: &Model) -> f64 {
        self.t
            .iter()
            .map(|row| row.iter().zip(model.costs()).map(|(m, c)| m * c).sum::<f64>())
            .sum()
    }
}

/// Recovers `q(u | ỹ) = t(ỹ, u) / Σ_u t(ỹ, u)`; rows with (near) zero mass
/// become uniform.
pub fn occupation_to_policy(occupation: &OccupationMeasure) -> ConditionalPolicy {
    let rows: Vec<Vec<f64>> = occupation
        .rows()
        .iter()
        .map(|row| {
            let mass: f64 = row.iter().sum();
            if mass > ZERO_ROW_MASS {
                let mut q: Vec<f64> = row.iter().map(|t| t / mass).collect();
                // Absorb rounding so the row passes the distribution check.
                let drift: f64 = 1.0 - q.iter().sum::<f64>();
                if let Some(max) = q.iter_mut().max_by(|a, b| a.total_cmp(b)) {
                    *max += drift;
                }
                q
            } else {
                vec![1.0 / row.len() as f64; row.len()]
            }
        })
        .collect();
    ConditionalPolicy::new(rows).expect("normalized nonnegative rows form a policy")
}

/// Per-hypothesis divergence table `D(p_i^u(·|ỹ) ‖ p_j^u(·|ỹ))` for every `j ≠ i`.
struct RewardTable {
    /// `[alternative][prev][control]`.
    divergences: Vec<Vec<Vec<f64>>>,
}

impl RewardTable {
    fn new(model: &Model, hypothesis: usize) -> Result<Self, DivergenceError> {
        let (ny, nu) = (model.num_observations(), model.num_controls());
        let divergences = (0..model.num_hypotheses())
            .filter(|&j| j != hypothesis)
            .map(|j| {
                (0..ny)
                    .map(|prev| {
                        (0..nu)
                            .map(|u| {
                                kl_divergence(
                                    model.kernel_row(hypothesis, u, prev),
                                    model.kernel_row(j, u, prev),
                                )
                            })
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RewardTable { divergences })
    }

    /// `min_j Σ t D_j / Σ t c` for any (unnormalized) occupation.
    fn ratio(&self, model: &Model, occupation: &[Vec<f64>]) -> f64 {
        let cost: f64 = occupation
            .iter()
            .map(|row| row.iter().zip(model.costs()).map(|(t, c)| t * c).sum::<f64>())
            .sum();
        let drift = self
            .divergences
            .iter()
            .map(|table| {
                table
                    .iter()
                    .zip(occupation)
                    .map(|(d_row, t_row)| d_row.iter().zip(t_row).map(|(d, t)| d * t).sum::<f64>())
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        (drift / cost).max(0.0)
    }
}

/// Simplex bookkeeping for one solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub flow_residual: f64,
    pub cost_residual: f64,
    /// A zero reduced cost at the optimum: other maximizers may exist and
    /// only `d_star` is canonical.
    pub possibly_non_unique: bool,
}

/// Optimal control rule and reward coefficient for one hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisPolicy {
    pub hypothesis: usize,
    pub q_star: ConditionalPolicy,
    /// Optimal cost-normalized reward, nats per unit cost.
    pub d_star: f64,
    pub occupation: OccupationMeasure,
    pub diagnostics: SolverDiagnostics,
}

fn check_hypothesis(model: &Model, hypothesis: usize) -> Result<(), SolverError> {
    if hypothesis >= model.num_hypotheses() {
        return Err(SolverError::HypothesisOutOfRange {
            hypothesis,
            num_hypotheses: model.num_hypotheses(),
        });
    }
    Ok(())
}

/// Solves the occupation-measure linear program for hypothesis `hypothesis`.
pub fn solve_policy(model: &Model, hypothesis: usize) -> Result<HypothesisPolicy, SolverError> {
    check_hypothesis(model, hypothesis)?;
    let (ny, nu) = (model.num_observations(), model.num_controls());
    let table = RewardTable::new(model, hypothesis)?;
    let alternatives = table.divergences.len();

    let num_t = ny * nu;
    let z = num_t;
    let num_vars = num_t + 1 + alternatives;
    let var = |prev: usize, u: usize| prev * nu + u;

    let mut a = Vec::new();
    let mut b = Vec::new();
    // Flow balance; the equations sum to zero, so the last one is dropped.
    for y in 0..ny - 1 {
        let mut row = vec![0.0; num_vars];
        for u in 0..nu {
            row[var(y, u)] += 1.0;
        }
        for prev in 0..ny {
            for u in 0..nu {
                row[var(prev, u)] -= model.prob(hypothesis, u, prev, y);
            }
        }
        a.push(row);
        b.push(0.0);
    }
    // Σ t D_j − z − slack_j = 0.
    for (k, divergences) in table.divergences.iter().enumerate() {
        let mut row = vec![0.0; num_vars];
        for prev in 0..ny {
            for u in 0..nu {
                row[var(prev, u)] = divergences[prev][u];
            }
        }
        row[z] = -1.0;
        row[num_t + 1 + k] = -1.0;
        a.push(row);
        b.push(0.0);
    }
    // Charnes–Cooper normalization of the cost denominator.
    let mut row = vec![0.0; num_vars];
    for prev in 0..ny {
        for u in 0..nu {
            row[var(prev, u)] = model.cost(u);
        }
    }
    a.push(row);
    b.push(1.0);

    let mut c = vec![0.0; num_vars];
    c[z] = 1.0;

    let solution = simplex::solve(&StandardLp { a, b, c }).map_err(|e| match e {
        LpError::Infeasible(r) => SolverError::Infeasible(format!("phase-one residual {r:e}")),
        other => SolverError::NumericalFailure {
            flow: f64::NAN,
            cost: f64::NAN,
            detail: other.to_string(),
        },
    })?;

    let occupation = OccupationMeasure::new(
        (0..ny)
            .map(|prev| (0..nu).map(|u| solution.x[var(prev, u)]).collect())
            .collect(),
    );
    let flow_residual = occupation.flow_residual(model, hypothesis);
    let cost_residual = occupation.cost_residual(model);
    if !(flow_residual <= RESIDUAL_TOLERANCE && cost_residual <= RESIDUAL_TOLERANCE) {
        return Err(SolverError::NumericalFailure {
            flow: flow_residual,
            cost: cost_residual,
            detail: "residuals exceed tolerance after refinement".into(),
        });
    }

    let d_star = table.ratio(model, occupation.rows());
    Ok(HypothesisPolicy {
        hypothesis,
        q_star: occupation_to_policy(&occupation),
        d_star,
        occupation,
        diagnostics: SolverDiagnostics {
            iterations: solution.iterations,
            flow_residual,
            cost_residual,
            possibly_non_unique: solution.possibly_non_unique,
        },
    })
}

/// Cost-normalized reward `r_i(q)` of a stationary policy.
pub fn evaluate_policy(
    model: &Model,
    hypothesis: usize,
    policy: &ConditionalPolicy,
) -> Result<f64, SolverError> {
    check_hypothesis(model, hypothesis)?;
    let table = RewardTable::new(model, hypothesis)?;
    evaluate_with(model, hypothesis, policy, &table)
}

fn evaluate_with(
    model: &Model,
    hypothesis: usize,
    policy: &ConditionalPolicy,
    table: &RewardTable,
) -> Result<f64, SolverError> {
    let mu = stationary_distribution(&mixed_kernel(model, hypothesis, policy)?)?;
    let occupation = OccupationMeasure::from_policy(&mu, policy);
    Ok(table.ratio(model, occupation.rows()))
}

/// All compositions of `steps` into `parts` nonnegative integers, as
/// probability vectors, in lexicographic order.
fn simplex_lattice(parts: usize, steps: usize) -> Vec<Vec<f64>> {
    fn fill(prefix: &mut Vec<usize>, parts: usize, remaining: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() + 1 == parts {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=remaining).rev() {
            prefix.push(k);
            fill(prefix, parts, remaining - k, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    fill(&mut Vec::with_capacity(parts), parts, steps, &mut out);
    out.into_iter()
        .map(|c| c.into_iter().map(|k| k as f64 / steps as f64).collect())
        .collect()
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Exhaustive search over policies whose rows lie on the simplex lattice with
/// `grid_steps` subdivisions. Returns the best grid policy and its reward.
///
/// `grid_steps = 1` visits only deterministic (corner) policies.
pub fn brute_force_policy(
    model: &Model,
    hypothesis: usize,
    grid_steps: usize,
) -> Result<(ConditionalPolicy, f64), SolverError> {
    check_hypothesis(model, hypothesis)?;
    if grid_steps == 0 {
        return Err(SolverError::InvalidGrid);
    }
    let (ny, nu) = (model.num_observations(), model.num_controls());
    let per_row = binomial((grid_steps + nu - 1) as u128, (nu - 1) as u128);
    let evaluations = (0..ny).try_fold(1u128, |acc, _| acc.checked_mul(per_row));
    match evaluations {
        Some(e) if e <= MAX_GRID_EVALUATIONS as u128 => {}
        Some(e) => return Err(SolverError::GridTooLarge { evaluations: e }),
        None => return Err(SolverError::GridTooLarge { evaluations: u128::MAX }),
    }

    let table = RewardTable::new(model, hypothesis)?;
    let lattice = simplex_lattice(nu, grid_steps);
    let mut choice = vec![0usize; ny];
    let mut best: Option<(ConditionalPolicy, f64)> = None;
    loop {
        let rows = choice.iter().map(|&k| lattice[k].clone()).collect();
        let policy = ConditionalPolicy::new(rows)?;
        let value = evaluate_with(model, hypothesis, &policy, &table)?;
        if best.as_ref().is_none_or(|(_, v)| value > *v) {
            best = Some((policy, value));
        }
        // Odometer over per-row lattice indices.
        let mut pos = 0;
        loop {
            if pos == ny {
                return Ok(best.expect("lattice is nonempty"));
            }
            choice[pos] += 1;
            if choice[pos] < lattice.len() {
                break;
            }
            choice[pos] = 0;
            pos += 1;
        }
    }
}

/// Optimal policies for every hypothesis of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySolution {
    policies: Vec<HypothesisPolicy>,
}

impl PolicySolution {
    /// Solves every hypothesis. Hypotheses are independent and solved in parallel.
    pub fn solve(model: &Model) -> Result<Self, SolverError> {
        use rayon::prelude::*;
        let policies = (0..model.num_hypotheses())
            .into_par_iter()
            .map(|i| solve_policy(model, i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PolicySolution { policies })
    }

    /// Assembles a solution from externally supplied per-hypothesis policies,
    /// ordered by hypothesis index.
    pub fn from_policies(policies: Vec<HypothesisPolicy>) -> Self {
        PolicySolution { policies }
    }

    pub fn num_hypotheses(&self) -> usize {
        self.policies.len()
    }

    pub fn policy(&self, hypothesis: usize) -> &HypothesisPolicy {
        &self.policies[hypothesis]
    }

    pub fn policies(&self) -> &[HypothesisPolicy] {
        &self.policies
    }

    /// `q*_i(· | prev)`.
    pub fn control_rule(&self, hypothesis: usize, prev: usize) -> &[f64] {
        self.policies[hypothesis].q_star.row(prev)
    }

    pub fn d_star(&self, hypothesis: usize) -> f64 {
        self.policies[hypothesis].d_star
    }

    /// Whether the policy shapes match the model's alphabets.
    pub fn matches(&self, model: &Model) -> bool {
        self.policies.len() == model.num_hypotheses()
            && self.policies.iter().all(|p| {
                p.q_star.num_observations() == model.num_observations()
                    && p.q_star.num_controls() == model.num_controls()
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_model, ObservationRef, RawModel};

    const EPS: f64 = 0.1;

    fn reciprocal(costs: [f64; 3]) -> Model {
        let p = vec![EPS, 1.0 - EPS];
        let pbar = vec![1.0 - EPS, EPS];
        let kernels = (0..3)
            .map(|i| {
                (0..3)
                    .map(|u| {
                        let row = if i == u { p.clone() } else { pbar.clone() };
                        vec![row.clone(), row]
                    })
                    .collect()
            })
            .collect();
        validate_model(&RawModel {
            num_hypotheses: 3,
            observations: vec!["0".into(), "1".into()],
            controls: vec!["alpha".into(), "beta".into(), "gamma".into()],
            y0: Some(ObservationRef::Index(0)),
            costs: costs.to_vec(),
            kernels,
        })
        .unwrap()
    }

    fn golden() -> f64 {
        (1.0 - 2.0 * EPS) * ((1.0 - EPS) / EPS).ln()
    }

    fn identical_kernels() -> Model {
        let row = vec![0.3, 0.7];
        validate_model(&RawModel {
            num_hypotheses: 3,
            observations: vec!["a".into(), "b".into()],
            controls: vec!["u".into(), "v".into()],
            y0: None,
            costs: vec![1.0, 2.0],
            kernels: vec![vec![vec![row.clone(), vec![0.6, 0.4]]; 2]; 3],
        })
        .unwrap()
    }

    #[test]
    fn uniform_cost_reciprocal_example() {
        let model = reciprocal([1.0; 3]);
        for i in 0..3 {
            let sol = solve_policy(&model, i).unwrap();
            assert!((sol.d_star - golden()).abs() < 1e-9, "{}", sol.d_star);
            for prev in 0..2 {
                let row = sol.q_star.row(prev);
                assert!((row[i] - 1.0).abs() < 1e-12, "{row:?}");
            }
        }
    }

    #[test]
    fn expensive_alpha_splits_over_beta_and_gamma() {
        let model = reciprocal([3.0, 1.0, 1.0]);
        let sol = solve_policy(&model, 0).unwrap();
        assert!((sol.d_star - golden() / 2.0).abs() < 1e-9);
        let marginal = sol.occupation.control_marginal();
        let total: f64 = marginal.iter().sum();
        assert!(marginal[0] / total < 1e-9);
        assert!((marginal[1] / total - 0.5).abs() < 1e-9);
        let value = evaluate_policy(&model, 0, &sol.q_star).unwrap();
        assert!((value - sol.d_star).abs() < 1e-9);
    }

    #[test]
    fn identical_kernels_give_zero_reward() {
        let model = identical_kernels();
        for i in 0..3 {
            let sol = solve_policy(&model, i).unwrap();
            assert_eq!(sol.d_star, 0.0);
            assert!(sol.diagnostics.possibly_non_unique);
        }
        let (_, v) = brute_force_policy(&model, 0, 4).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn occupation_round_trip() {
        let q = ConditionalPolicy::new(vec![vec![0.2, 0.8], vec![0.5, 0.5]]).unwrap();
        let t = OccupationMeasure::from_policy(&[0.3, 0.7], &q);
        assert!(occupation_to_policy(&t).max_abs_diff(&q) < 1e-15);
    }

    #[test]
    fn zero_occupation_rows_become_uniform() {
        let t = OccupationMeasure::new(vec![vec![0.0, 0.0, 0.0], vec![0.1, 0.0, 0.3]]);
        let q = occupation_to_policy(&t);
        assert_eq!(q.row(0), &[1.0 / 3.0; 3]);
        assert_eq!(q.row(1), &[0.25, 0.0, 0.75]);
        let q = occupation_to_policy(&OccupationMeasure::new(vec![vec![0.0; 2]; 2]));
        assert_eq!(q, ConditionalPolicy::uniform(2, 2));
    }

    #[test]
    fn evaluate_point_mass_on_alpha() {
        let model = reciprocal([1.0; 3]);
        let q = ConditionalPolicy::constant(2, 3, 0);
        assert!((evaluate_policy(&model, 0, &q).unwrap() - golden()).abs() < 1e-12);
    }

    #[test]
    fn brute_force_corners_hit_the_optimum() {
        let model = reciprocal([1.0; 3]);
        let (q, v) = brute_force_policy(&model, 0, 1).unwrap();
        assert!((v - golden()).abs() < 1e-12);
        assert_eq!(q, ConditionalPolicy::constant(2, 3, 0));
        let (_, v) = brute_force_policy(&model, 0, 10).unwrap();
        assert!((v - golden()).abs() < 0.02);
    }

    #[test]
    fn grid_limits() {
        let model = reciprocal([1.0; 3]);
        assert_eq!(brute_force_policy(&model, 0, 0).unwrap_err(), SolverError::InvalidGrid);
        assert!(matches!(
            brute_force_policy(&model, 0, 5000),
            Err(SolverError::GridTooLarge { .. })
        ));
    }

    #[test]
    fn lattice_counts() {
        assert_eq!(simplex_lattice(3, 20).len(), 231);
        assert_eq!(simplex_lattice(1, 7), vec![vec![1.0]]);
        assert_eq!(binomial(22, 2), 231);
    }

    #[test]
    fn out_of_range_hypothesis() {
        let model = reciprocal([1.0; 3]);
        assert!(matches!(
            solve_policy(&model, 3),
            Err(SolverError::HypothesisOutOfRange { .. })
        ));
    }

    #[test]
    fn cost_scaling() {
        let model = reciprocal([2.0, 1.0, 1.5]);
        let base = solve_policy(&model, 1).unwrap();
        let scaled_model = model.with_costs(vec![8.0, 4.0, 6.0]).unwrap();
        let scaled = solve_policy(&scaled_model, 1).unwrap();
        assert!((scaled.d_star - base.d_star / 4.0).abs() < 1e-9);
    }
}
