//! Two-phase revised simplex for standard-form linear programs
//!
//! ```text
//! minimize cᵀx  subject to  A x = b,  x ≥ 0
//! ```
//!
//! The basis is kept in a partitioned form. Basic columns that are unit
//! vectors (slacks and artificials) are never factorized; only the square
//! block formed by the structural basic columns and the rows those unit
//! columns leave uncovered is LU-factorized, and it is refactorized from
//! scratch after every pivot. The ℓ1 programs in [`crate::selector`] have
//! sparse optima, so that block stays small even when `A` is large.
//!
//! Pricing uses Dantzig's most-negative reduced cost until a run of
//! degenerate pivots is seen, then switches permanently to Bland's rule.
//! Ties are always broken towards the lowest variable index, so a solve is
//! a deterministic function of its inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{linf, LuFactor, Matrix};

/// A standard-form LP: `min cᵀx s.t. Ax = b, x ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub c: Vec<f64>,
    pub a: Matrix,
    pub b: Vec<f64>,
}

impl LpProblem {
    pub fn new(c: Vec<f64>, a: Matrix, b: Vec<f64>) -> Result<Self> {
        if c.len() != a.cols() || b.len() != a.rows() {
            return Err(Error::DimensionMismatch(format!(
                "LP with {} costs, {}x{} constraints and {} right-hand sides",
                c.len(),
                a.rows(),
                a.cols(),
                b.len()
            )));
        }
        if c.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LP data".into()));
        }
        Ok(Self { c, a, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub status: LpStatus,
    pub iterations: usize,
    /// Dual prices `y` of the equality rows (only meaningful when optimal).
    pub duals: Vec<f64>,
}

impl LpSolution {
    /// Turns non-optimal outcomes into errors.
    pub fn require_optimal(self) -> Result<Self> {
        match self.status {
            LpStatus::Optimal => Ok(self),
            LpStatus::Infeasible => Err(Error::Infeasible),
            LpStatus::Unbounded => Err(Error::Unbounded),
        }
    }

    /// `cᵀx − bᵀy`
    pub fn duality_gap(&self, problem: &LpProblem) -> f64 {
        let primal: f64 = problem.c.iter().zip(&self.x).map(|(c, x)| c * x).sum();
        let dual: f64 = problem.b.iter().zip(&self.duals).map(|(b, y)| b * y).sum();
        primal - dual
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    /// Hard cap on pivots across both phases; `None` means `50·(m+n) + 1000`.
    pub max_iter: Option<usize>,
    /// Consecutive degenerate pivots tolerated before switching to Bland's rule.
    pub degenerate_limit: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            opt_tol: 1e-8,
            max_iter: None,
            degenerate_limit: 50,
        }
    }
}

const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_INTERVAL: usize = 40;

/// Solves `p` with the given feasibility and optimality tolerances.
pub fn solve_lp(p: &LpProblem, feas_tol: f64, opt_tol: f64) -> Result<LpSolution> {
    let opts = LpOptions {
        feas_tol,
        opt_tol,
        ..LpOptions::default()
    };
    solve_standard_form(&p.c, &p.a, &p.b, &opts)
}

/// Same as [`solve_lp`] but borrowing the pieces, so callers can reuse one
/// large constraint matrix across many right-hand sides.
pub fn solve_standard_form(
    c: &[f64],
    a: &Matrix,
    b: &[f64],
    opts: &LpOptions,
) -> Result<LpSolution> {
    if c.len() != a.cols() || b.len() != a.rows() {
        return Err(Error::DimensionMismatch("standard-form LP".into()));
    }
    let mut s = Simplex::new(c, a, b, opts);
    s.run()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

struct Simplex<'a> {
    a: &'a Matrix,
    cost: &'a [f64],
    opts: LpOptions,
    m: usize,
    n: usize,
    /// Row multipliers making the right-hand side nonnegative.
    sign: Vec<f64>,
    b: Vec<f64>,
    /// For structural columns, the row `r` if the (sign-adjusted) column is `e_r`.
    unit_row: Vec<Option<usize>>,
    /// Artificial `n + t` is the unit column `e_{art_rows[t]}`.
    art_rows: Vec<usize>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    // Derived from `basis` by `refactor`.
    row_unit_pos: Vec<Option<usize>>,
    nonunit_pos: Vec<usize>,
    free_rows: Vec<usize>,
    nonunit_cols: Vec<Vec<f64>>,
    lu: Option<LuFactor>,
    /// Product-form updates since the last refactorization: `(position, B⁻¹a_enter)`.
    etas: Vec<(usize, Vec<f64>)>,
    x_b: Vec<f64>,
    iterations: usize,
    max_iter: usize,
    bland: bool,
    degenerate_streak: usize,
}

impl<'a> Simplex<'a> {
    fn new(cost: &'a [f64], a: &'a Matrix, b: &[f64], opts: &LpOptions) -> Self {
        let m = a.rows();
        let n = a.cols();
        let sign: Vec<f64> = b.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
        let b: Vec<f64> = b.iter().zip(&sign).map(|(v, s)| v * s).collect();

        // One sequential sweep to find columns equal to a unit vector.
        let mut nnz = vec![0usize; n];
        let mut last_row = vec![0usize; n];
        let mut last_val = vec![0.0f64; n];
        for i in 0..m {
            for (j, &v) in a.row(i).iter().enumerate() {
                if v != 0.0 {
                    nnz[j] += 1;
                    last_row[j] = i;
                    last_val[j] = v * sign[i];
                }
            }
        }
        let unit_row: Vec<Option<usize>> = (0..n)
            .map(|j| (nnz[j] == 1 && last_val[j] == 1.0).then_some(last_row[j]))
            .collect();

        let mut first_unit: Vec<Option<usize>> = vec![None; m];
        for (j, r) in unit_row.iter().enumerate() {
            if let Some(r) = *r {
                if first_unit[r].is_none() {
                    first_unit[r] = Some(j);
                }
            }
        }
        let mut art_rows = Vec::new();
        let mut basis = Vec::with_capacity(m);
        for (r, unit) in first_unit.iter().enumerate() {
            match unit {
                Some(j) => basis.push(*j),
                None => {
                    basis.push(n + art_rows.len());
                    art_rows.push(r);
                }
            }
        }
        let mut is_basic = vec![false; n + art_rows.len()];
        for &v in &basis {
            is_basic[v] = true;
        }
        let max_iter = opts.max_iter.unwrap_or(50 * (m + n) + 1000);
        Self {
            a,
            cost,
            opts: *opts,
            m,
            n,
            sign,
            b,
            unit_row,
            art_rows,
            basis,
            is_basic,
            row_unit_pos: Vec::new(),
            nonunit_pos: Vec::new(),
            free_rows: Vec::new(),
            nonunit_cols: Vec::new(),
            lu: None,
            etas: Vec::new(),
            x_b: Vec::new(),
            iterations: 0,
            max_iter,
            bland: false,
            degenerate_streak: 0,
        }
    }

    fn n_total(&self) -> usize {
        self.n + self.art_rows.len()
    }

    fn is_artificial(&self, var: usize) -> bool {
        var >= self.n
    }

    fn unit_row_of(&self, var: usize) -> Option<usize> {
        if var < self.n {
            self.unit_row[var]
        } else {
            Some(self.art_rows[var - self.n])
        }
    }

    fn column(&self, var: usize) -> Vec<f64> {
        if var < self.n {
            (0..self.m)
                .map(|i| self.sign[i] * self.a[(i, var)])
                .collect()
        } else {
            let mut col = vec![0.0; self.m];
            col[self.art_rows[var - self.n]] = 1.0;
            col
        }
    }

    fn phase_cost(&self, phase: Phase, var: usize) -> f64 {
        match (phase, self.is_artificial(var)) {
            (Phase::One, true) => 1.0,
            (Phase::One, false) => 0.0,
            (Phase::Two, true) => 0.0,
            (Phase::Two, false) => self.cost[var],
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        self.etas.clear();
        self.row_unit_pos = vec![None; m];
        self.nonunit_pos.clear();
        for pos in 0..m {
            let var = self.basis[pos];
            match self.unit_row_of(var) {
                Some(r) if self.row_unit_pos[r].is_none() => self.row_unit_pos[r] = Some(pos),
                _ => self.nonunit_pos.push(pos),
            }
        }
        self.free_rows = (0..m).filter(|&r| self.row_unit_pos[r].is_none()).collect();
        debug_assert_eq!(self.free_rows.len(), self.nonunit_pos.len());
        self.nonunit_cols = self
            .nonunit_pos
            .iter()
            .map(|&pos| self.column(self.basis[pos]))
            .collect();
        let k = self.nonunit_pos.len();
        self.lu = if k == 0 {
            None
        } else {
            let mut block = Matrix::zeros(k, k);
            for (q, col) in self.nonunit_cols.iter().enumerate() {
                for (t, &r) in self.free_rows.iter().enumerate() {
                    block[(t, q)] = col[r];
                }
            }
            Some(LuFactor::new(&block).map_err(|_| {
                Error::InvalidInput("simplex basis became numerically singular".into())
            })?)
        };
        Ok(())
    }

    /// `B⁻¹ col`, indexed by basis position.
    fn solve_b(&self, col: &[f64]) -> Vec<f64> {
        let mut z = self.solve_base(col);
        for (r, alpha) in &self.etas {
            let zr = z[*r] / alpha[*r];
            if zr != 0.0 {
                for (zi, ai) in z.iter_mut().zip(alpha) {
                    *zi -= ai * zr;
                }
            }
            z[*r] = zr;
        }
        z
    }

    /// `y` with `yᵀB = c_Bᵀ`, `c_B` indexed by basis position.
    fn solve_bt(&self, c_b: &[f64]) -> Vec<f64> {
        let mut u = c_b.to_vec();
        for (r, alpha) in self.etas.iter().rev() {
            let mut acc = u[*r];
            for (i, (ui, ai)) in u.iter().zip(alpha).enumerate() {
                if i != *r {
                    acc -= ui * ai;
                }
            }
            u[*r] = acc / alpha[*r];
        }
        self.solve_base_t(&u)
    }

    /// Solve against the basis as of the last refactorization.
    fn solve_base(&self, col: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        let z = match &self.lu {
            Some(lu) => {
                let rhs: Vec<f64> = self.free_rows.iter().map(|&r| col[r]).collect();
                lu.solve(&rhs)
            }
            None => Vec::new(),
        };
        for (q, &pos) in self.nonunit_pos.iter().enumerate() {
            out[pos] = z[q];
        }
        for r in 0..self.m {
            if let Some(pos) = self.row_unit_pos[r] {
                let mut v = col[r];
                for (q, c) in self.nonunit_cols.iter().enumerate() {
                    v -= c[r] * z[q];
                }
                out[pos] = v;
            }
        }
        out
    }

    fn solve_base_t(&self, c_b: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.m];
        for r in 0..self.m {
            if let Some(pos) = self.row_unit_pos[r] {
                y[r] = c_b[pos];
            }
        }
        if let Some(lu) = &self.lu {
            let rhs: Vec<f64> = self
                .nonunit_pos
                .iter()
                .zip(&self.nonunit_cols)
                .map(|(&pos, col)| {
                    let mut v = c_b[pos];
                    for r in 0..self.m {
                        if self.row_unit_pos[r].is_some() && y[r] != 0.0 {
                            v -= y[r] * col[r];
                        }
                    }
                    v
                })
                .collect();
            let y_t = lu.solve_transpose(&rhs);
            for (t, &r) in self.free_rows.iter().enumerate() {
                y[r] = y_t[t];
            }
        }
        y
    }

    /// `yᵀA_j` for every structural column, touching only rows with `y_i ≠ 0`.
    fn price_structural(&self, y: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.n];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let s = yi * self.sign[i];
            for (wj, aij) in w.iter_mut().zip(self.a.row(i)) {
                *wj += s * aij;
            }
        }
        w
    }

    fn recompute_x(&mut self) {
        let b = self.b.clone();
        self.x_b = self.solve_b(&b);
    }

    fn choose_entering(&self, phase: Phase, y: &[f64]) -> Option<usize> {
        let w = self.price_structural(y);
        let mut best: Option<(usize, f64)> = None;
        let total = match phase {
            Phase::One => self.n_total(),
            Phase::Two => self.n,
        };
        for j in 0..total {
            if self.is_basic[j] {
                continue;
            }
            let d = if j < self.n {
                self.phase_cost(phase, j) - w[j]
            } else {
                self.phase_cost(phase, j) - y[self.art_rows[j - self.n]]
            };
            if d < -self.opts.opt_tol {
                if self.bland {
                    return Some(j);
                }
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
        }
        best.map(|(j, _)| j)
    }

    /// Ratio test; returns the leaving basis position and the step length.
    fn choose_leaving(&self, alpha: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for pos in 0..self.m {
            let a = alpha[pos];
            if a <= PIVOT_TOL {
                continue;
            }
            let ratio = self.x_b[pos].max(0.0) / a;
            best = match best {
                None => Some((pos, ratio)),
                Some((bp, br)) => {
                    let tie = (ratio - br).abs() <= 1e-12 * br.abs().max(1.0);
                    if (tie && self.basis[pos] < self.basis[bp]) || (!tie && ratio < br) {
                        Some((pos, ratio))
                    } else {
                        Some((bp, br))
                    }
                }
            };
        }
        best
    }

    /// `alpha` is `B⁻¹a_enter` for the current basis.
    fn pivot(&mut self, leave_pos: usize, enter: usize, alpha: Vec<f64>) -> Result<()> {
        let leaving = self.basis[leave_pos];
        self.is_basic[leaving] = false;
        self.is_basic[enter] = true;
        self.basis[leave_pos] = enter;
        if self.etas.len() >= REFACTOR_INTERVAL {
            self.refactor()?;
            self.recompute_x();
        } else {
            let theta = self.x_b[leave_pos] / alpha[leave_pos];
            for (x, a) in self.x_b.iter_mut().zip(&alpha) {
                *x -= a * theta;
            }
            self.x_b[leave_pos] = theta;
            self.etas.push((leave_pos, alpha));
        }
        Ok(())
    }

    /// Runs one phase to optimality; `Ok(false)` means unbounded.
    fn run_phase(&mut self, phase: Phase) -> Result<bool> {
        loop {
            if self.iterations >= self.max_iter {
                return Err(Error::IterationLimit(self.max_iter));
            }
            let c_b: Vec<f64> = self
                .basis
                .iter()
                .map(|&v| self.phase_cost(phase, v))
                .collect();
            let y = self.solve_bt(&c_b);
            let Some(enter) = self.choose_entering(phase, &y) else {
                return Ok(true);
            };
            let alpha = self.solve_b(&self.column(enter));
            let Some((leave_pos, step)) = self.choose_leaving(&alpha) else {
                return Ok(false);
            };
            if step <= self.opts.feas_tol {
                self.degenerate_streak += 1;
                if self.degenerate_streak > self.opts.degenerate_limit {
                    self.bland = true;
                }
            } else {
                self.degenerate_streak = 0;
            }
            self.pivot(leave_pos, enter, alpha)?;
            self.iterations += 1;
        }
    }

    /// Pivots zero-level artificials out of the basis after phase one. An
    /// artificial that cannot leave marks a redundant row and stays basic at
    /// zero; it is never priced again.
    fn drive_out_artificials(&mut self) -> Result<()> {
        for pos in 0..self.m {
            let var = self.basis[pos];
            if !self.is_artificial(var) {
                continue;
            }
            let mut e = vec![0.0; self.m];
            e[pos] = 1.0;
            let rho = self.solve_bt(&e);
            let row = self.price_structural(&rho);
            let mut best: Option<(usize, f64)> = None;
            for (j, &v) in row.iter().enumerate() {
                if self.is_basic[j] || v.abs() <= PIVOT_TOL {
                    continue;
                }
                if best.map_or(true, |(_, bv)| v.abs() > bv) {
                    best = Some((j, v.abs()));
                }
            }
            if let Some((j, _)) = best {
                let alpha = self.solve_b(&self.column(j));
                self.pivot(pos, j, alpha)?;
            }
        }
        Ok(())
    }

    fn run(&mut self) -> Result<LpSolution> {
        self.refactor()?;
        self.recompute_x();
        if !self.art_rows.is_empty() {
            self.run_phase(Phase::One)?;
            self.refactor()?;
            self.recompute_x();
            let infeasibility: f64 = self
                .basis
                .iter()
                .zip(&self.x_b)
                .filter(|(&v, _)| self.is_artificial(v))
                .map(|(_, &x)| x.max(0.0))
                .sum();
            if infeasibility > self.opts.feas_tol * linf(&self.b).max(1.0) {
                return Ok(self.finish(LpStatus::Infeasible));
            }
            self.drive_out_artificials()?;
            self.bland = false;
            self.degenerate_streak = 0;
        }
        let bounded = self.run_phase(Phase::Two)?;
        self.refactor()?;
        self.recompute_x();
        Ok(self.finish(if bounded {
            LpStatus::Optimal
        } else {
            LpStatus::Unbounded
        }))
    }

    fn finish(&self, status: LpStatus) -> LpSolution {
        let mut x = vec![0.0; self.n];
        for (pos, &var) in self.basis.iter().enumerate() {
            if var < self.n {
                x[var] = self.x_b[pos].max(0.0);
            }
        }
        let objective_value = x.iter().zip(self.cost).map(|(x, c)| x * c).sum();
        let duals = if status == LpStatus::Optimal {
            let c_b: Vec<f64> = self
                .basis
                .iter()
                .map(|&v| self.phase_cost(Phase::Two, v))
                .collect();
            self.solve_bt(&c_b)
                .iter()
                .zip(&self.sign)
                .map(|(y, s)| y * s)
                .collect()
        } else {
            vec![0.0; self.m]
        };
        LpSolution {
            x,
            objective_value,
            status,
            iterations: self.iterations,
            duals,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force optimum over all basic feasible solutions.
    fn vertex_enumeration(p: &LpProblem) -> Option<f64> {
        let m = p.a.rows();
        let n = p.a.cols();
        let mut best: Option<f64> = None;
        let mut idx: Vec<usize> = (0..m).collect();
        loop {
            let mut bm = Matrix::zeros(m, m);
            for (q, &j) in idx.iter().enumerate() {
                for i in 0..m {
                    bm[(i, q)] = p.a[(i, j)];
                }
            }
            if let Ok(lu) = LuFactor::new(&bm) {
                let xb = lu.solve(&p.b);
                if xb.iter().all(|&v| v >= -1e-9) {
                    let obj: f64 = idx.iter().zip(&xb).map(|(&j, x)| p.c[j] * x).sum();
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
            // next combination
            let mut i = m;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if idx[i] < n - m + i {
                    idx[i] += 1;
                    for k in (i + 1)..m {
                        idx[k] = idx[k - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn one_variable() {
        let p = LpProblem::new(vec![-1.0, 0.0], Matrix::from_rows(&[[1.0, 1.0]]), vec![1.0]).unwrap();
        let s = solve_lp(&p, 1e-8, 1e-8).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.objective_value, -1.0, epsilon = 1e-12);
        assert!(s.duality_gap(&p).abs() < 1e-10);
    }

    #[test]
    fn degenerate_objective() {
        let p = LpProblem::new(vec![1.0, 1.0], Matrix::from_rows(&[[1.0, 1.0]]), vec![2.0]).unwrap();
        let s = solve_lp(&p, 1e-8, 1e-8).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_abs_diff_eq!(s.objective_value, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        // x1 + x2 = -1 with x >= 0
        let p = LpProblem::new(vec![1.0, 1.0], Matrix::from_rows(&[[1.0, 1.0]]), vec![-1.0]).unwrap();
        let s = solve_lp(&p, 1e-8, 1e-8).unwrap();
        assert_eq!(s.status, LpStatus::Infeasible);
        assert_eq!(s.require_optimal().unwrap_err(), Error::Infeasible);
        // min -x1 s.t. x1 - x2 = 1
        let p = LpProblem::new(vec![-1.0, 0.0], Matrix::from_rows(&[[1.0, -1.0]]), vec![1.0]).unwrap();
        let s = solve_lp(&p, 1e-8, 1e-8).unwrap();
        assert_eq!(s.status, LpStatus::Unbounded);
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        // second row duplicates the first
        let a = Matrix::from_rows(&[[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]]);
        let p = LpProblem::new(vec![1.0, 2.0, 3.0], a, vec![1.0, 2.0]).unwrap();
        let s = solve_lp(&p, 1e-8, 1e-8).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_abs_diff_eq!(s.objective_value, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn iteration_limit_is_reported() {
        let a = Matrix::from_rows(&[[1.0, 1.0, 1.0, 0.0], [1.0, -1.0, 0.0, 1.0]]);
        let opts = LpOptions {
            max_iter: Some(0),
            ..LpOptions::default()
        };
        let err = solve_standard_form(&[-1.0, -2.0, 0.0, 0.0], &a, &[4.0, 1.0], &opts).unwrap_err();
        assert_eq!(err, Error::IterationLimit(0));
    }

    fn random_bounded_lp(rng: &mut ChaCha8Rng, m: usize, n: usize) -> LpProblem {
        // First row is a positive "budget" row, which keeps the region bounded.
        let mut a = Matrix::zeros(m, n);
        for j in 0..n {
            a[(0, j)] = rng.gen_range(0.5..2.0);
        }
        for i in 1..m {
            for j in 0..n {
                a[(i, j)] = rng.gen_range(-2.0..2.0);
            }
        }
        // b = A x0 for a random nonnegative x0, so the LP is feasible.
        let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b = a.matvec(&x0);
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        LpProblem::new(c, a, b).unwrap()
    }

    #[test]
    fn matches_vertex_enumeration_on_random_lps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let m = rng.gen_range(1..=4);
            let n = rng.gen_range(m + 1..=8);
            let p = random_bounded_lp(&mut rng, m, n);
            let oracle = vertex_enumeration(&p).expect("feasible by construction");
            let s = solve_lp(&p, 1e-8, 1e-8).unwrap();
            assert_eq!(s.status, LpStatus::Optimal);
            assert!(
                (s.objective_value - oracle).abs() <= 1e-7,
                "{} vs {}",
                s.objective_value,
                oracle
            );
            let resid: Vec<f64> = p.a.matvec(&s.x).iter().zip(&p.b).map(|(l, r)| l - r).collect();
            assert!(linf(&resid) <= 1e-8);
            assert!(s.x.iter().all(|&v| v >= -1e-8));
            assert!(s.duality_gap(&p) <= 1e-8 * (1.0 + s.objective_value.abs()));
        }
    }

    #[test]
    fn three_by_six_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_bounded_lp(&mut rng, 3, 6);
        let oracle = vertex_enumeration(&p).unwrap();
        let s = solve_lp(&p, 1e-8, 1e-8).unwrap();
        assert_abs_diff_eq!(s.objective_value, oracle, epsilon = 1e-9);
    }

    #[test]
    fn solves_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_bounded_lp(&mut rng, 4, 8);
        let a = solve_lp(&p, 1e-8, 1e-8).unwrap();
        let b = solve_lp(&p, 1e-8, 1e-8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reduced_costs_certify_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..50 {
            let p = random_bounded_lp(&mut rng, 3, 7);
            let s = solve_lp(&p, 1e-8, 1e-8).unwrap();
            let aty = p.a.t_matvec(&s.duals);
            for j in 0..p.c.len() {
                assert!(p.c[j] - aty[j] >= -1e-8);
            }
        }
    }
}
