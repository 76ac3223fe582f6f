//! Dense two-phase primal simplex.
//!
//! Problems in this crate are tiny (a handful of rows, at most a few dozen
//! columns), so everything lives in one dense tableau. Pivoting follows
//! Bland's rule on both the entering and the leaving side, which makes the
//! solver free of cycling and its output a pure function of the input bits.

use serde::{Deserialize, Serialize};

const PIVOT_EPS: f64 = 1e-11;
const COST_EPS: f64 = 1e-11;
const FEAS_EPS: f64 = 1e-9;

/// `maximize objective · x` subject to `ineq_rows · x <= ineq_rhs`,
/// `eq_rows · x = eq_rhs` and per-variable bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub ineq_rows: Vec<Vec<f64>>,
    pub ineq_rhs: Vec<f64>,
    pub eq_rows: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
}

impl LinearProgram {
    /// A program over `n` variables, each bounded to `[0, +inf)`.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LinearProgram {
            objective,
            ineq_rows: Vec::new(),
            ineq_rhs: Vec::new(),
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            bounds: vec![(0.0, f64::INFINITY); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.ineq_rows.push(row);
        self.ineq_rhs.push(rhs);
    }

    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) {
        self.ineq_rows.push(row.into_iter().map(|a| -a).collect());
        self.ineq_rhs.push(-rhs);
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    /// Checks row widths and bound ordering.
    pub fn validate(&self) -> crate::Result<()> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(crate::error::invalid(format!(
                "{} bounds for {} variables",
                self.bounds.len(),
                n
            )));
        }
        if self.ineq_rows.len() != self.ineq_rhs.len() || self.eq_rows.len() != self.eq_rhs.len() {
            return Err(crate::error::invalid("row and rhs counts differ"));
        }
        for row in self.ineq_rows.iter().chain(&self.eq_rows) {
            if row.len() != n {
                return Err(crate::error::invalid(format!(
                    "row of width {} in a program with {} variables",
                    row.len(),
                    n
                )));
            }
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo > hi || lo.is_nan() || hi.is_nan() {
                return Err(crate::error::invalid(format!("bad bounds on x{j}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Maximum violation of rows and bounds by `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for (row, &b) in self.ineq_rows.iter().zip(&self.ineq_rhs) {
            worst = worst.max(dot(row, x) - b);
        }
        for (row, &b) in self.eq_rows.iter().zip(&self.eq_rhs) {
            worst = worst.max((dot(row, x) - b).abs());
        }
        for (&xj, &(lo, hi)) in x.iter().zip(&self.bounds) {
            worst = worst.max(lo - xj).max(xj - hi);
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How an original variable is expressed through the nonnegative
/// standard-form columns: `x = offset + sum(sign * y[col])`.
struct VarMap {
    offset: f64,
    terms: Vec<(usize, f64)>,
}

pub fn solve_lp(lp: &LinearProgram) -> crate::Result<LpSolution> {
    lp.validate()?;
    let n = lp.num_vars();

    // Substitute bounds away so that every standard-form column is >= 0.
    let mut maps = Vec::with_capacity(n);
    let mut n_cols = 0usize;
    let mut extra_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for &(lo, hi) in &lp.bounds {
        if lo.is_finite() {
            let col = n_cols;
            n_cols += 1;
            if hi.is_finite() {
                extra_rows.push((vec![(col, 1.0)], hi - lo));
            }
            maps.push(VarMap { offset: lo, terms: vec![(col, 1.0)] });
        } else if hi.is_finite() {
            let col = n_cols;
            n_cols += 1;
            maps.push(VarMap { offset: hi, terms: vec![(col, -1.0)] });
        } else {
            let col = n_cols;
            n_cols += 2;
            maps.push(VarMap { offset: 0.0, terms: vec![(col, 1.0), (col + 1, -1.0)] });
        }
    }

    let transform = |row: &[f64], rhs: f64| -> (Vec<f64>, f64) {
        let mut out = vec![0.0; n_cols];
        let mut b = rhs;
        for (j, &a) in row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            b -= a * maps[j].offset;
            for &(col, s) in &maps[j].terms {
                out[col] += a * s;
            }
        }
        (out, b)
    };

    let mut le_rows = Vec::new();
    for (row, &b) in lp.ineq_rows.iter().zip(&lp.ineq_rhs) {
        le_rows.push(transform(row, b));
    }
    for (terms, b) in extra_rows {
        let mut out = vec![0.0; n_cols];
        for (col, s) in terms {
            out[col] = s;
        }
        le_rows.push((out, b));
    }
    let mut eq_rows = Vec::new();
    for (row, &b) in lp.eq_rows.iter().zip(&lp.eq_rhs) {
        eq_rows.push(transform(row, b));
    }

    let mut cost = vec![0.0; n_cols];
    let mut cost_offset = 0.0;
    for (j, &c) in lp.objective.iter().enumerate() {
        cost_offset += c * maps[j].offset;
        for &(col, s) in &maps[j].terms {
            cost[col] += c * s;
        }
    }

    let standard = StandardForm::build(n_cols, le_rows, eq_rows);
    let result = standard.solve(&cost);

    let (status, y) = match result {
        Phase::Optimal(y) => (LpStatus::Optimal, y),
        Phase::Infeasible => {
            return Ok(LpSolution { status: LpStatus::Infeasible, x: vec![0.0; n], objective: f64::NAN })
        }
        Phase::Unbounded => {
            return Ok(LpSolution { status: LpStatus::Unbounded, x: vec![0.0; n], objective: f64::INFINITY })
        }
    };
    let x: Vec<f64> = maps
        .iter()
        .map(|m| m.offset + m.terms.iter().map(|&(col, s)| s * y[col]).sum::<f64>())
        .collect();
    let objective = dot(&lp.objective, &x);
    debug_assert!((objective - (dot(&cost, &y) + cost_offset)).abs() < 1e-6);
    Ok(LpSolution { status, x, objective })
}

enum Phase {
    Optimal(Vec<f64>),
    Infeasible,
    Unbounded,
}

/// Rows of `A y (+ slack) = b` with `b >= 0`, laid out as a dense tableau.
struct StandardForm {
    n_struct: usize,
    n_slack: usize,
    n_art: usize,
    /// (m rows) x (n_struct + n_slack + n_art + 1); last column is the rhs.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
}

impl StandardForm {
    fn build(n_struct: usize, le: Vec<(Vec<f64>, f64)>, eq: Vec<(Vec<f64>, f64)>) -> Self {
        let n_slack = le.len();
        let m = le.len() + eq.len();
        // One artificial per row whose slack cannot start in the basis.
        let n_art = le.iter().filter(|(_, b)| *b < 0.0).count() + eq.len();
        let width = n_struct + n_slack + n_art + 1;
        let mut rows = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut next_art = n_struct + n_slack;
        for (i, (a, b)) in le.into_iter().enumerate() {
            let mut row = vec![0.0; width];
            row[..n_struct].copy_from_slice(&a);
            row[n_struct + i] = 1.0;
            row[width - 1] = b;
            if b < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
                row[next_art] = 1.0;
                basis.push(next_art);
                next_art += 1;
            } else {
                basis.push(n_struct + i);
            }
            rows.push(row);
        }
        for (a, b) in eq {
            let mut row = vec![0.0; width];
            row[..n_struct].copy_from_slice(&a);
            row[width - 1] = b;
            if b < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
            row[next_art] = 1.0;
            basis.push(next_art);
            next_art += 1;
            rows.push(row);
        }
        StandardForm { n_struct, n_slack, n_art, rows, basis }
    }

    fn width(&self) -> usize {
        self.n_struct + self.n_slack + self.n_art
    }

    fn is_art(&self, col: usize) -> bool {
        col >= self.n_struct + self.n_slack
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        self.rows[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Bland-rule simplex on the current tableau, maximizing `cost` over the
    /// columns for which `allowed` holds. Returns false when unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: impl Fn(usize) -> bool) -> bool {
        let rhs = self.width();
        loop {
            // Reduced costs c_j - c_B B^-1 A_j, computed fresh each pass.
            let entering = (0..self.width()).filter(|&j| allowed(j)).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let z: f64 = self.rows.iter().zip(&self.basis).map(|(row, &b)| cost[b] * row[j]).sum();
                cost[j] - z > COST_EPS
            });
            let Some(c) = entering else { return true };

            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                if row[c] > PIVOT_EPS {
                    let ratio = row[rhs] / row[c];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            if ratio < best - 1e-12 || (ratio <= best + 1e-12 && self.basis[i] < self.basis[k]) {
                                Some((i, ratio))
                            } else {
                                Some((k, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else { return false };
            self.pivot(r, c);
        }
    }

    fn solve(mut self, cost: &[f64]) -> Phase {
        let width = self.width();
        if self.n_art > 0 {
            let mut phase1 = vec![0.0; width];
            for (j, c) in phase1.iter_mut().enumerate() {
                if self.is_art(j) {
                    *c = -1.0;
                }
            }
            self.optimize(&phase1, |_| true);
            let infeas: f64 = self
                .rows
                .iter()
                .zip(&self.basis)
                .filter(|(_, &b)| self.is_art(b))
                .map(|(row, _)| row[width])
                .sum();
            if infeas > FEAS_EPS {
                return Phase::Infeasible;
            }
            // Drive zero-level artificials out of the basis; drop redundant rows.
            let mut i = 0;
            while i < self.rows.len() {
                if self.is_art(self.basis[i]) {
                    let col = (0..self.n_struct + self.n_slack).find(|&j| self.rows[i][j].abs() > 1e-9);
                    match col {
                        Some(j) => {
                            self.pivot(i, j);
                            i += 1;
                        }
                        None => {
                            self.rows.remove(i);
                            self.basis.remove(i);
                        }
                    }
                } else {
                    i += 1;
                }
            }
        }

        let mut full_cost = vec![0.0; width];
        full_cost[..self.n_struct].copy_from_slice(cost);
        let limit = self.n_struct + self.n_slack;
        if !self.optimize(&full_cost, |j| j < limit) {
            return Phase::Unbounded;
        }
        let mut y = vec![0.0; self.n_struct];
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            if b < self.n_struct {
                y[b] = row[width].max(0.0);
            }
        }
        Phase::Optimal(y)
    }
}
