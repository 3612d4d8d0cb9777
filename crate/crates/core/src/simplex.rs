//! Dense two-phase simplex method for the small linear programs arising in
//! the Chebyshev (min–max) fitting of count distribution functions. The
//! problems have at most a few hundred rows and columns, so a plain
//! tableau with Bland's anti-cycling rule is sufficient and certifiable.

use crate::error::{Error, Result};

/// min c·v subject to `A_ub v <= b_ub`, `A_eq v = b_eq`, `v >= 0`.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub ub_rows: Vec<(Vec<f64>, f64)>,
    pub eq_rows: Vec<(Vec<f64>, f64)>,
}

/// Optimal basic solution with optimality diagnostics.
#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Values of the original variables.
    pub x: Vec<f64>,
    pub objective: f64,
    /// max(0, -min reduced cost) at termination; near zero certifies dual
    /// feasibility of the final basis.
    pub dual_residual: f64,
    pub iterations: usize,
}

const PIVOT_EPS: f64 = 1e-11;
const FEAS_EPS: f64 = 1e-9;

struct Tableau {
    rows: usize,
    cols: usize, // structural + slack + artificial columns (rhs separate)
    a: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    n_vars: usize,
    n_real: usize, // structural + slack (everything except artificials)
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.cols + c]
    }

    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.a[r * self.cols + c]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.at(row, col);
        let inv = 1.0 / piv;
        for c in 0..self.cols {
            *self.at_mut(row, c) *= inv;
        }
        self.rhs[row] *= inv;
        for r in 0..self.rows {
            if r == row {
                continue;
            }
            let factor = self.at(r, col);
            if factor == 0.0 {
                continue;
            }
            for c in 0..self.cols {
                let v = self.at(row, c);
                *self.at_mut(r, c) -= factor * v;
            }
            self.rhs[r] -= factor * self.rhs[row];
        }
        self.basis[row] = col;
    }

    /// Reduced costs for the given objective over columns `0..limit`;
    /// returns (reduced costs, objective value).
    fn reduced_costs(&self, cost: &[f64], limit: usize) -> (Vec<f64>, f64) {
        // y solves the basis pricing implicitly: since each basic column is
        // a unit vector after pivoting, reduced cost_j = c_j - Σ_r c_basis(r) a_rj.
        let mut red = vec![0.0; limit];
        let mut obj = 0.0;
        let basis_cost: Vec<f64> = self
            .basis
            .iter()
            .map(|&b| if b < cost.len() { cost[b] } else { 0.0 })
            .collect();
        for r in 0..self.rows {
            obj += basis_cost[r] * self.rhs[r];
        }
        for (j, rj) in red.iter_mut().enumerate() {
            let cj = if j < cost.len() { cost[j] } else { 0.0 };
            let mut dot = 0.0;
            for r in 0..self.rows {
                if basis_cost[r] != 0.0 {
                    dot += basis_cost[r] * self.at(r, j);
                }
            }
            *rj = cj - dot;
        }
        (red, obj)
    }

    /// One simplex phase: minimize `cost`, allowing entering columns below
    /// `enter_limit`. Bland's rule on both the entering and leaving choice.
    fn run_phase(&mut self, cost: &[f64], enter_limit: usize) -> Result<usize> {
        let mut iterations = 0usize;
        let max_iterations = 50_000 + 200 * (self.rows + self.cols);
        loop {
            let (red, _) = self.reduced_costs(cost, enter_limit);
            let mut entering = None;
            for (j, &rj) in red.iter().enumerate() {
                if rj < -PIVOT_EPS && !self.basis.contains(&j) {
                    entering = Some(j);
                    break;
                }
            }
            let Some(col) = entering else {
                return Ok(iterations);
            };
            // Ratio test.
            let mut leaving: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for r in 0..self.rows {
                let a = self.at(r, col);
                if a > PIVOT_EPS {
                    let ratio = self.rhs[r] / a;
                    if ratio < best_ratio - 1e-15
                        || (ratio < best_ratio + 1e-15
                            && leaving.is_some_and(|l| self.basis[r] < self.basis[l]))
                    {
                        best_ratio = ratio;
                        leaving = Some(r);
                    }
                }
            }
            let Some(row) = leaving else {
                return Err(Error::Solver(format!(
                    "unbounded direction at column {col}"
                )));
            };
            self.pivot(row, col);
            iterations += 1;
            if iterations > max_iterations {
                return Err(Error::Solver(format!(
                    "simplex iteration cap reached ({iterations})"
                )));
            }
        }
    }
}

/// Solves the linear program by the two-phase dense simplex method.
pub fn solve(problem: &LpProblem) -> Result<LpSolution> {
    let n_vars = problem.objective.len();
    for (row, _) in problem.ub_rows.iter().chain(&problem.eq_rows) {
        if row.len() != n_vars {
            return Err(Error::Solver(format!(
                "row length {} does not match {} variables",
                row.len(),
                n_vars
            )));
        }
    }
    let n_ub = problem.ub_rows.len();
    let rows = n_ub + problem.eq_rows.len();
    if rows == 0 {
        return Err(Error::Solver("LP has no constraints".into()));
    }
    let n_slack = n_ub;

    // Assemble [A | slack | artificial] with nonnegative rhs. Slack signs
    // flip on negated rows; those rows and all equality rows receive
    // artificials.
    let mut needs_artificial: Vec<bool> = Vec::with_capacity(rows);
    let mut dense: Vec<Vec<f64>> = Vec::with_capacity(rows);
    let mut rhs: Vec<f64> = Vec::with_capacity(rows);
    for (i, (row, b)) in problem.ub_rows.iter().enumerate() {
        let flip = *b < 0.0;
        let sign = if flip { -1.0 } else { 1.0 };
        let mut r = vec![0.0; n_vars + n_slack];
        for (j, &v) in row.iter().enumerate() {
            r[j] = sign * v;
        }
        r[n_vars + i] = sign;
        dense.push(r);
        rhs.push(sign * b);
        needs_artificial.push(flip);
    }
    for (row, b) in &problem.eq_rows {
        let flip = *b < 0.0;
        let sign = if flip { -1.0 } else { 1.0 };
        let mut r = vec![0.0; n_vars + n_slack];
        for (j, &v) in row.iter().enumerate() {
            r[j] = sign * v;
        }
        dense.push(r);
        rhs.push(sign * b);
        needs_artificial.push(true);
    }

    let n_art = needs_artificial.iter().filter(|&&x| x).count();
    let n_real = n_vars + n_slack;
    let cols = n_real + n_art;
    let mut a = vec![0.0; rows * cols];
    let mut basis = vec![usize::MAX; rows];
    let mut art_idx = 0usize;
    for r in 0..rows {
        for c in 0..n_real {
            a[r * cols + c] = dense[r][c];
        }
        if needs_artificial[r] {
            a[r * cols + n_real + art_idx] = 1.0;
            basis[r] = n_real + art_idx;
            art_idx += 1;
        } else {
            // slack of this row is +1 and basic
            basis[r] = n_vars + r;
        }
    }
    let mut tab = Tableau {
        rows,
        cols,
        a,
        rhs,
        basis,
        n_vars,
        n_real,
    };

    let mut iterations = 0usize;
    if n_art > 0 {
        let mut phase1_cost = vec![0.0; cols];
        for c in n_real..cols {
            phase1_cost[c] = 1.0;
        }
        iterations += tab.run_phase(&phase1_cost, cols)?;
        let (_, obj1) = tab.reduced_costs(&phase1_cost, cols);
        if obj1 > FEAS_EPS {
            return Err(Error::Solver(format!(
                "phase 1 ended infeasible (residual {obj1:.3e})"
            )));
        }
        // Pivot lingering artificials out of the basis where possible.
        for r in 0..tab.rows {
            if tab.basis[r] >= tab.n_real && tab.rhs[r].abs() <= FEAS_EPS {
                if let Some(col) = (0..tab.n_real).find(|&c| tab.at(r, c).abs() > 1e-9) {
                    tab.pivot(r, col);
                }
            }
        }
    }

    let mut phase2_cost = vec![0.0; cols];
    phase2_cost[..n_vars].copy_from_slice(&problem.objective);
    iterations += tab.run_phase(&phase2_cost, n_real)?;

    let (red, objective) = tab.reduced_costs(&phase2_cost, n_real);
    let dual_residual = red
        .iter()
        .fold(0.0f64, |acc, &r| acc.max(-r))
        .max(0.0);

    let mut x = vec![0.0; tab.n_vars];
    for r in 0..tab.rows {
        if tab.basis[r] < tab.n_vars {
            x[tab.basis[r]] = tab.rhs[r];
        }
    }
    Ok(LpSolution {
        x,
        objective,
        dual_residual,
        iterations,
    })
}
