//! KL distance, policy-mixed kernels and stationary distributions.
//!
//! All logarithms are natural, so divergences are in nats.

use std::ops::Deref;

use thiserror::Error;

use crate::model::Model;

/// Tolerance on the total mass of a [`Distribution`].
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-12;

/// Maximum left-invariance residual accepted from [`stationary_distribution`].
pub const STATIONARY_RESIDUAL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DivergenceError {
    #[error("p({index}) = {p} > 0 but q({index}) = 0")]
    SupportViolation { index: usize, p: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("not a distribution: {0}")]
    NotADistribution(String),
    #[error("transition matrix entry ({row}, {col}) = {value} is not positive")]
    NotPositive { row: usize, col: usize, value: f64 },
    #[error("stationary solve residual {residual:e} exceeds tolerance")]
    NoConvergence { residual: f64 },
}

/// A probability vector over a finite alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, DivergenceError> {
        if probs.is_empty() {
            return Err(DivergenceError::NotADistribution("empty".into()));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
            return Err(DivergenceError::NotADistribution(format!("entry {i} = {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(DivergenceError::NotADistribution(format!("sums to {sum}")));
        }
        Ok(Distribution(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Distribution(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[at] = 1.0;
        Distribution(probs)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Distribution {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Distribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A stationary randomized control rule `q(u | ỹ)`: one distribution over
/// controls per previous observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalPolicy {
    rows: Vec<Distribution>,
}

impl ConditionalPolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, DivergenceError> {
        if rows.is_empty() {
            return Err(DivergenceError::NotADistribution("policy has no rows".into()));
        }
        let width = rows[0].len();
        let rows = rows
            .into_iter()
            .map(|r| {
                if r.len() != width {
                    return Err(DivergenceError::DimensionMismatch {
                        expected: width,
                        found: r.len(),
                    });
                }
                Distribution::new(r)
            })
            .collect::<Result<_, _>>()?;
        Ok(ConditionalPolicy { rows })
    }

    pub fn uniform(num_observations: usize, num_controls: usize) -> Self {
        ConditionalPolicy {
            rows: vec![Distribution::uniform(num_controls); num_observations],
        }
    }

    /// Always apply `control`, whatever the previous observation.
    pub fn constant(num_observations: usize, num_controls: usize, control: usize) -> Self {
        ConditionalPolicy {
            rows: vec![Distribution::point_mass(num_controls, control); num_observations],
        }
    }

    pub fn num_observations(&self) -> usize {
        self.rows.len()
    }

    pub fn num_controls(&self) -> usize {
        self.rows[0].len()
    }

    /// `q(· | prev)`.
    pub fn row(&self, prev: usize) -> &[f64] {
        &self.rows[prev]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.iter().map(|r| &**r)
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.to_vec()).collect()
    }

    /// Largest entrywise difference to `other`.
    pub fn max_abs_diff(&self, other: &ConditionalPolicy) -> f64 {
        self.rows()
            .zip(other.rows())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// `D(p ‖ q) = Σ p(y) ln(p(y) / q(y))`, with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, DivergenceError> {
    if p.len() != q.len() {
        return Err(DivergenceError::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    let mut total = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(DivergenceError::SupportViolation { index, p: pi });
            }
            total += pi * (pi / qi).ln();
        }
    }
    // Rounding can leave a tiny negative total when p ≈ q.
    Ok(total.max(0.0))
}

/// `p_i^q(y | ỹ) = Σ_u q(u | ỹ) p_i^u(y | ỹ)`.
pub fn mixed_kernel(
    model: &Model,
    hypothesis: usize,
    policy: &ConditionalPolicy,
) -> Result<Vec<Vec<f64>>, DivergenceError> {
    let (ny, nu) = (model.num_observations(), model.num_controls());
    if policy.num_observations() != ny {
        return Err(DivergenceError::DimensionMismatch {
            expected: ny,
            found: policy.num_observations(),
        });
    }
    if policy.num_controls() != nu {
        return Err(DivergenceError::DimensionMismatch {
            expected: nu,
            found: policy.num_controls(),
        });
    }
    let mixed = (0..ny)
        .map(|prev| {
            let q = policy.row(prev);
            let mut row = vec![0.0; ny];
            for (u, &weight) in q.iter().enumerate() {
                if weight == 0.0 {
                    continue;
                }
                for (acc, &p) in row.iter_mut().zip(model.kernel_row(hypothesis, u, prev)) {
                    *acc += weight * p;
                }
            }
            row
        })
        .collect();
    Ok(mixed)
}

/// Largest `|Σ_ỹ μ(ỹ) P(y | ỹ) − μ(y)|` over `y`.
pub fn stationary_residual(mu: &[f64], transition: &[Vec<f64>]) -> f64 {
    (0..mu.len())
        .map(|y| {
            let flowed: f64 = transition.iter().zip(mu).map(|(row, m)| m * row[y]).sum();
            (flowed - mu[y]).abs()
        })
        .fold(0.0, f64::max)
}

/// The unique stationary distribution of a strictly positive transition matrix.
///
/// Solves `(Pᵀ − I) μ = 0` with the last equation replaced by `Σ μ = 1`,
/// then applies one step of iterative refinement.
pub fn stationary_distribution(transition: &[Vec<f64>]) -> Result<Distribution, DivergenceError> {
    let n = transition.len();
    if n == 0 {
        return Err(DivergenceError::NotADistribution("empty transition matrix".into()));
    }
    for (row, values) in transition.iter().enumerate() {
        if values.len() != n {
            return Err(DivergenceError::DimensionMismatch {
                expected: n,
                found: values.len(),
            });
        }
        if let Some((col, &value)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(DivergenceError::NotPositive { row, col, value });
        }
    }

    let mut system = vec![vec![0.0; n]; n];
    for (y, eq) in system.iter_mut().enumerate().take(n - 1) {
        for (prev, coef) in eq.iter_mut().enumerate() {
            *coef = transition[prev][y];
        }
        eq[y] -= 1.0;
    }
    system[n - 1] = vec![1.0; n];
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;

    let mut mu = solve_dense(&system, &rhs).ok_or(DivergenceError::NoConvergence {
        residual: f64::INFINITY,
    })?;
    let residual_vec: Vec<f64> = (0..n)
        .map(|r| rhs[r] - system[r].iter().zip(&mu).map(|(a, x)| a * x).sum::<f64>())
        .collect();
    if let Some(correction) = solve_dense(&system, &residual_vec) {
        for (m, c) in mu.iter_mut().zip(correction) {
            *m += c;
        }
    }

    let residual = stationary_residual(&mu, transition);
    if !(residual <= STATIONARY_RESIDUAL) || mu.iter().any(|m| !(*m > 0.0)) {
        return Err(DivergenceError::NoConvergence { residual });
    }
    let sum: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|m| *m /= sum);
    Ok(Distribution(mu))
}

/// Gaussian elimination with partial pivoting. `None` if singular.
pub(crate) fn solve_dense(matrix: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut b = rhs.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let factor = a[r][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= factor * a[col][c];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - tail) / a[r][r];
    }
    Some(x)
}
