//! Small dense linear programs.
//!
//! Two-phase tableau simplex with Bland's pivoting rule. The problems solved
//! in this crate have at most a few dozen variables (one weight per
//! corruption event plus an epigraph variable), so a dense tableau is the
//! simplest exact method. Dual values are read off the final tableau from
//! the columns that formed the initial identity basis.

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-11;
const MAX_ITERATIONS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

/// `maximize c·x  subject to  rows,  x >= 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    n_vars: usize,
    objective: Vec<f64>,
    rows: Vec<(Vec<f64>, Relation, f64)>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// One value per constraint, in the caller's orientation:
    /// the sensitivity of the optimum to that row's right-hand side.
    pub duals: Vec<f64>,
    pub objective: f64,
}

impl LinearProgram {
    pub fn maximize(objective: Vec<f64>) -> Self {
        Self {
            n_vars: objective.len(),
            objective,
            rows: Vec::new(),
        }
    }

    pub fn minimize(objective: Vec<f64>) -> Self {
        Self::maximize(objective.into_iter().map(|c| -c).collect())
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn constraint(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) -> &mut Self {
        assert_eq!(coeffs.len(), self.n_vars, "constraint width");
        self.rows.push((coeffs, rel, rhs));
        self
    }

    pub fn solve(&self) -> Result<LpSolution> {
        Tableau::build(self).run(self)
    }
}

struct Tableau {
    m: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    // initial identity column of each row and the sign applied to the row
    unit_col: Vec<usize>,
    row_sign: Vec<f64>,
    first_artificial: usize,
    n_cols: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.rows.len();
        let n = lp.n_vars;
        let mut n_slack = 0;
        let mut n_art = 0;
        let mut norm = Vec::with_capacity(m);
        for (coeffs, rel, rhs) in &lp.rows {
            let (sign, rel) = if *rhs < 0.0 {
                let flipped = match rel {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                (-1.0, flipped)
            } else {
                (1.0, *rel)
            };
            match rel {
                Relation::Le => n_slack += 1,
                Relation::Ge => {
                    n_slack += 1;
                    n_art += 1
                }
                Relation::Eq => n_art += 1,
            }
            norm.push((coeffs, rel, rhs * sign, sign));
        }
        let first_artificial = n + n_slack;
        let n_cols = first_artificial + n_art;
        let width = n_cols + 1;
        let mut data = vec![0.0; m * width];
        let mut basis = vec![0; m];
        let mut unit_col = vec![0; m];
        let mut row_sign = vec![1.0; m];
        let mut next_slack = n;
        let mut next_art = first_artificial;
        for (i, (coeffs, rel, rhs, sign)) in norm.into_iter().enumerate() {
            let row = &mut data[i * width..(i + 1) * width];
            for (j, c) in coeffs.iter().enumerate() {
                row[j] = c * sign;
            }
            row[n_cols] = rhs;
            row_sign[i] = sign;
            match rel {
                Relation::Le => {
                    row[next_slack] = 1.0;
                    basis[i] = next_slack;
                    unit_col[i] = next_slack;
                    next_slack += 1;
                }
                Relation::Ge => {
                    row[next_slack] = -1.0;
                    next_slack += 1;
                    row[next_art] = 1.0;
                    basis[i] = next_art;
                    unit_col[i] = next_art;
                    next_art += 1;
                }
                Relation::Eq => {
                    row[next_art] = 1.0;
                    basis[i] = next_art;
                    unit_col[i] = next_art;
                    next_art += 1;
                }
            }
        }
        Self {
            m,
            width,
            data,
            basis,
            unit_col,
            row_sign,
            first_artificial,
            n_cols,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.n_cols)
    }

    fn pivot(&mut self, r: usize, c: usize, obj: &mut [f64]) {
        let w = self.width;
        let p = self.at(r, c);
        for j in 0..w {
            self.data[r * w + j] /= p;
        }
        let pivot_row: Vec<f64> = self.data[r * w..(r + 1) * w].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.data[i * w + c];
            if f != 0.0 {
                let row = &mut self.data[i * w..(i + 1) * w];
                for (x, pr) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * pr;
                }
                row[c] = 0.0;
            }
        }
        let f = obj[c];
        if f != 0.0 {
            for (x, pr) in obj.iter_mut().zip(&pivot_row) {
                *x -= f * pr;
            }
            obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Reduced-cost row `c_B B^-1 A - c` (last entry: objective value) for costs `cost`.
    fn objective_row(&self, cost: &[f64]) -> Vec<f64> {
        let mut obj = vec![0.0; self.width];
        for (j, o) in obj.iter_mut().enumerate().take(self.n_cols) {
            *o = -cost[j];
        }
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (j, o) in obj.iter_mut().enumerate() {
                    *o += cb * self.at(i, j);
                }
            }
        }
        obj
    }

    /// Bland's rule: lowest-index improving column, lowest-index leaving basic variable.
    fn iterate(&mut self, obj: &mut [f64], allow: impl Fn(usize) -> bool) -> Result<()> {
        for _ in 0..MAX_ITERATIONS {
            let entering = (0..self.n_cols).find(|&j| allow(j) && obj[j] < -PIVOT_EPS);
            let Some(c) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, c);
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-14 || (ratio <= lr + 1e-14 && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::Lp("unbounded".into()));
            };
            self.pivot(r, c, obj);
        }
        Err(Error::Lp("iteration limit reached".into()))
    }

    fn run(mut self, lp: &LinearProgram) -> Result<LpSolution> {
        let n_art = self.n_cols - self.first_artificial;
        if n_art > 0 {
            let mut cost = vec![0.0; self.n_cols];
            for c in cost.iter_mut().skip(self.first_artificial) {
                *c = -1.0;
            }
            let mut obj = self.objective_row(&cost);
            self.iterate(&mut obj, |_| true)?;
            let infeasibility = -obj[self.n_cols];
            let scale = 1.0 + lp.rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
            if infeasibility > 1e-9 * scale {
                return Err(Error::Lp(format!(
                    "infeasible (phase one residual {infeasibility:.3e})"
                )));
            }
            // drive zero-level artificials out of the basis where possible
            for i in 0..self.m {
                if self.basis[i] >= self.first_artificial {
                    if let Some(c) = (0..self.first_artificial).find(|&j| self.at(i, j).abs() > 1e-9) {
                        self.pivot(i, c, &mut obj);
                    }
                }
            }
        }
        let mut cost = vec![0.0; self.n_cols];
        cost[..lp.n_vars].copy_from_slice(&lp.objective);
        let mut obj = self.objective_row(&cost);
        let first_art = self.first_artificial;
        self.iterate(&mut obj, |j| j < first_art)?;

        let mut x = vec![0.0; lp.n_vars];
        for i in 0..self.m {
            let b = self.basis[i];
            if b < lp.n_vars {
                x[b] = self.rhs(i).max(0.0);
            }
        }
        let duals = (0..self.m).map(|i| obj[self.unit_col[i]] * self.row_sign[i]).collect();
        let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpSolution { x, duals, objective })
    }
}
