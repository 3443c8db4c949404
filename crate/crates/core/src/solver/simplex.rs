//! Small dense two-phase simplex with Bland's anti-cycling rule.
//!
//! Solves `maximize cᵀx subject to Ax = b, x ≥ 0`. Sized for the tiny
//! occupation-measure programs of the policy solver: a handful of rows and a
//! few dozen columns, heavily degenerate (most right-hand sides are zero),
//! which is why Bland's rule is used throughout.

use thiserror::Error;

use crate::divergence::solve_dense;

/// Smallest magnitude accepted as a pivot element.
pub const PIVOT_TOLERANCE: f64 = 1e-11;
/// Primal feasibility and reduced-cost optimality tolerance.
pub const OPTIMALITY_TOLERANCE: f64 = 1e-9;

const MAX_ITERATIONS: usize = 50_000;
const RATIO_TIE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("linear program is infeasible (phase-one residual {0:e})")]
    Infeasible(f64),
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex did not terminate within {0} pivots")]
    IterationLimit(usize),
}

/// `maximize cᵀx s.t. Ax = b, x ≥ 0`.
#[derive(Debug, Clone)]
pub struct StandardLp {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Some nonbasic column has a zero reduced cost at the optimum, so the
    /// optimal face may contain more than this vertex.
    pub possibly_non_unique: bool,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    /// Reduced costs `c_B B⁻¹ A_j − c_j`, with the objective value last.
    objective: Vec<f64>,
    basis: Vec<usize>,
    /// Columns that may enter the basis.
    enterable: usize,
    iterations: usize,
}

impl Tableau {
    fn width(&self) -> usize {
        self.objective.len() - 1
    }

    fn price(&mut self, cost: &[f64]) {
        let rhs = self.width();
        let mut objective = vec![0.0; rhs + 1];
        for (j, o) in objective.iter_mut().enumerate() {
            let basic: f64 = self
                .rows
                .iter()
                .zip(&self.basis)
                .map(|(row, &bv)| cost[bv] * row[j])
                .sum();
            *o = basic - if j < rhs { cost[j] } else { 0.0 };
        }
        self.objective = objective;
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let pivot = self.rows[r][c];
        self.rows[r].iter_mut().for_each(|v| *v /= pivot);
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let factor = row[c];
            if factor != 0.0 {
                row.iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= factor * p);
                row[c] = 0.0;
            }
        }
        let factor = self.objective[c];
        if factor != 0.0 {
            self.objective
                .iter_mut()
                .zip(&pivot_row)
                .for_each(|(v, p)| *v -= factor * p);
            self.objective[c] = 0.0;
        }
        self.basis[r] = c;
        self.iterations += 1;
    }

    /// Runs Bland's rule to optimality.
    fn optimize(&mut self) -> Result<(), LpError> {
        let rhs = self.width();
        loop {
            if self.iterations > MAX_ITERATIONS {
                return Err(LpError::IterationLimit(MAX_ITERATIONS));
            }
            let Some(entering) = (0..self.enterable).find(|&j| self.objective[j] < -OPTIMALITY_TOLERANCE)
            else {
                return Ok(());
            };
            let mut leaving: Option<(usize, f64)> = None;
            for (r, row) in self.rows.iter().enumerate() {
                if row[entering] <= PIVOT_TOLERANCE {
                    continue;
                }
                let ratio = row[rhs].max(0.0) / row[entering];
                leaving = match leaving {
                    None => Some((r, ratio)),
                    Some((best, best_ratio)) => {
                        if ratio < best_ratio - RATIO_TIE
                            || (ratio <= best_ratio + RATIO_TIE && self.basis[r] < self.basis[best])
                        {
                            Some((r, ratio))
                        } else {
                            Some((best, best_ratio))
                        }
                    }
                };
            }
            match leaving {
                Some((r, _)) => self.pivot(r, entering),
                None => return Err(LpError::Unbounded),
            }
        }
    }
}

/// Solves `lp` by the two-phase method. The final basic solution is
/// recomputed from the original constraint matrix to shed accumulated
/// tableau round-off.
pub fn solve(lp: &StandardLp) -> Result<LpSolution, LpError> {
    let m = lp.b.len();
    let n = lp.c.len();

    // Nonnegative right-hand side.
    let mut a = lp.a.clone();
    let mut b = lp.b.clone();
    for (row, rhs) in a.iter_mut().zip(b.iter_mut()) {
        if *rhs < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
        }
    }

    let width = n + m;
    let rows = (0..m)
        .map(|r| {
            let mut row = vec![0.0; width + 1];
            row[..n].copy_from_slice(&a[r]);
            row[n + r] = 1.0;
            row[width] = b[r];
            row
        })
        .collect();
    let mut tableau = Tableau {
        rows,
        objective: vec![0.0; width + 1],
        basis: (n..n + m).collect(),
        enterable: width,
        iterations: 0,
    };

    // Phase one: maximize −Σ artificials.
    let phase_one_cost: Vec<f64> = (0..width).map(|j| if j < n { 0.0 } else { -1.0 }).collect();
    tableau.price(&phase_one_cost);
    tableau.optimize()?;
    let infeasibility = -tableau.objective[width];
    if infeasibility > OPTIMALITY_TOLERANCE {
        return Err(LpError::Infeasible(infeasibility));
    }

    // Drive zero-level artificials out of the basis; drop redundant rows.
    let mut kept_rows: Vec<usize> = (0..m).collect();
    let mut r = 0;
    while r < tableau.rows.len() {
        if tableau.basis[r] >= n {
            match (0..n).find(|&j| tableau.rows[r][j].abs() > PIVOT_TOLERANCE) {
                Some(j) => tableau.pivot(r, j),
                None => {
                    tableau.rows.remove(r);
                    tableau.basis.remove(r);
                    kept_rows.remove(r);
                    continue;
                }
            }
        }
        r += 1;
    }

    // Phase two over structural columns only.
    let mut cost = lp.c.clone();
    cost.resize(width, 0.0);
    tableau.enterable = n;
    tableau.price(&cost);
    tableau.optimize()?;

    let basic: Vec<bool> = {
        let mut flags = vec![false; n];
        tableau.basis.iter().filter(|&&j| j < n).for_each(|&j| flags[j] = true);
        flags
    };
    let possibly_non_unique =
        (0..n).any(|j| !basic[j] && tableau.objective[j].abs() <= OPTIMALITY_TOLERANCE);

    let mut x = vec![0.0; n];
    for (row, &bv) in tableau.rows.iter().zip(&tableau.basis) {
        if bv < n {
            x[bv] = row[width];
        }
    }
    if tableau.basis.iter().all(|&j| j < n) {
        let system: Vec<Vec<f64>> = kept_rows
            .iter()
            .map(|&r| tableau.basis.iter().map(|&j| a[r][j]).collect())
            .collect();
        let rhs: Vec<f64> = kept_rows.iter().map(|&r| b[r]).collect();
        if let Some(refined) = solve_dense(&system, &rhs) {
            if refined.iter().all(|v| *v >= -OPTIMALITY_TOLERANCE) {
                for (&j, v) in tableau.basis.iter().zip(refined) {
                    x[j] = v;
                }
            }
        }
    }
    x.iter_mut().for_each(|v| *v = v.max(0.0));

    let objective = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution {
        x,
        objective,
        iterations: tableau.iterations,
        possibly_non_unique,
    })
}
