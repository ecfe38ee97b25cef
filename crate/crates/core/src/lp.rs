//! Dense two-phase simplex solver.
//!
//! Every pricing problem in this crate reduces to a linear program over a
//! finite path lattice. The solver works on a dense tableau in standard form
//! (`min c'x, Ax = b, x >= 0`) and reports, besides the primal point, the
//! dual multipliers of every constraint row and, when the problem is
//! infeasible, a Farkas ray certifying it.
//!
//! Lattice problems mix mass levels with tail proxies orders of magnitude
//! larger, so rows and columns are equilibrated, the ratio test prefers large
//! pivots among near-ties, and the basis is reinverted from the original
//! columns every few dozen pivots. An optimal basis whose point fails a
//! row-relative residual audit is reported as an error, never as a solution.
//!
//! Sign conventions for the multipliers `y` (one entry per row, equality rows
//! first, then inequality rows, in insertion order):
//!
//! * Optimal: `objective = b_eq'y_eq + b_ub'y_ub`. For a minimisation the
//!   inequality multipliers are `<= 0`, for a maximisation `>= 0`.
//! * Infeasible: the ray satisfies `y_ub <= 0`, `(y'A)_j <= 0` for every
//!   nonnegative variable, `(y'A)_j = 0` for every free variable, and
//!   `y'b > 0`. No `x` can then satisfy the constraints.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Optimisation direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Bound on a single decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarBound {
    NonNegative,
    Free,
}

/// A sparse constraint row `sum coeffs[k].1 * x[coeffs[k].0] (=|<=) rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Row {
    fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

/// A linear program with equality rows, `<=` rows and per-variable bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub sense: Sense,
    pub cost: Vec<f64>,
    pub eq_rows: Vec<Row>,
    pub ub_rows: Vec<Row>,
    pub bounds: Vec<VarBound>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("iteration limit of {0} pivots exceeded")]
    IterationLimitExceeded(usize),
    #[error("numerical breakdown: every improving column has pivots below tolerance")]
    NumericalBreakdown,
    #[error("optimal basis fails its residual audit (residual {0:e})")]
    InaccurateSolution(f64),
}

impl LpProblem {
    /// An empty problem over `cost.len()` nonnegative variables.
    pub fn new(sense: Sense, cost: Vec<f64>) -> Self {
        let n = cost.len();
        LpProblem {
            sense,
            cost,
            eq_rows: Vec::new(),
            ub_rows: Vec::new(),
            bounds: vec![VarBound::NonNegative; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.eq_rows.len() + self.ub_rows.len()
    }

    pub fn set_free(&mut self, j: usize) {
        self.bounds[j] = VarBound::Free;
    }

    pub fn add_eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.eq_rows.push(Row { coeffs, rhs });
        self.eq_rows.len() - 1
    }

    pub fn add_ub(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.ub_rows.push(Row { coeffs, rhs });
        self.ub_rows.len() - 1
    }

    /// `coeffs . x >= rhs`, stored as `-coeffs . x <= -rhs`.
    pub fn add_ge(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        let neg = coeffs.into_iter().map(|(j, a)| (j, -a)).collect();
        self.add_ub(neg, -rhs)
    }

    /// Dense convenience constructor used mostly in tests.
    pub fn from_dense(
        sense: Sense,
        cost: Vec<f64>,
        a_eq: &[Vec<f64>],
        b_eq: &[f64],
        a_ub: &[Vec<f64>],
        b_ub: &[f64],
    ) -> Self {
        let mut lp = LpProblem::new(sense, cost);
        for (row, &b) in a_eq.iter().zip(b_eq) {
            lp.add_eq(sparse(row), b);
        }
        for (row, &b) in a_ub.iter().zip(b_ub) {
            lp.add_ub(sparse(row), b);
        }
        lp
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.cost.len();
        if self.bounds.len() != n {
            return Err(LpError::Dimension("bounds length differs from cost length"));
        }
        if self.cost.iter().any(|c| !c.is_finite()) {
            return Err(LpError::NonFinite("cost"));
        }
        for row in self.eq_rows.iter().chain(&self.ub_rows) {
            if !row.rhs.is_finite() {
                return Err(LpError::NonFinite("rhs"));
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(LpError::Dimension("row references a variable past the cost vector"));
                }
                if !a.is_finite() {
                    return Err(LpError::NonFinite("constraint matrix"));
                }
            }
        }
        Ok(())
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

fn sparse(row: &[f64]) -> Vec<(usize, f64)> {
    row.iter()
        .enumerate()
        .filter(|(_, a)| **a != 0.0)
        .map(|(j, a)| (j, *a))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Dual multipliers, equality rows first.
    pub duals: Vec<f64>,
    pub farkas_ray: Option<Vec<f64>>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn eq_duals(&self, problem: &LpProblem) -> &[f64] {
        &self.duals[..problem.eq_rows.len()]
    }

    pub fn ub_duals(&self, problem: &LpProblem) -> &[f64] {
        &self.duals[problem.eq_rows.len()..]
    }
}

/// Entering-column rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PivotRule {
    /// Smallest-index entering and leaving variables throughout.
    Bland,
    /// Most negative reduced cost; falls back to Bland permanently after a
    /// run of degenerate pivots.
    DantzigBlandFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub pivot_tol: f64,
    pub feas_tol: f64,
    pub dual_tol: f64,
    /// Hard cap on pivots across both phases. `0` picks a size-based default.
    pub max_iterations: usize,
    pub pivot_rule: PivotRule,
    /// Consecutive degenerate pivots tolerated before switching to Bland.
    pub degenerate_streak: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            pivot_tol: 1e-10,
            feas_tol: 1e-9,
            dual_tol: 1e-8,
            max_iterations: 0,
            pivot_rule: PivotRule::DantzigBlandFallback,
            degenerate_streak: 50,
        }
    }
}

/// Solve `problem`. Deterministic for a fixed problem and options.
pub fn solve_lp(problem: &LpProblem, options: &SolverOptions) -> Result<LpSolution, LpError> {
    problem.validate()?;
    let mut tab = Tableau::build(problem, options);
    let solution = tab.run(problem, options)?;
    if solution.is_optimal() {
        // Rounding can leave a basis that is optimal for the tableau but not
        // for the problem; never hand that back as a solution. Residuals are
        // measured per row against that row's own magnitude.
        let residual = relative_residual(problem, &solution.x);
        if residual.is_nan() || residual > RESIDUAL_TOL {
            return Err(LpError::InaccurateSolution(residual));
        }
    }
    Ok(solution)
}

/// Largest row-relative primal residual accepted from an optimal basis.
const RESIDUAL_TOL: f64 = 1e-6;

fn relative_residual(problem: &LpProblem, x: &[f64]) -> f64 {
    let row = |r: &Row| {
        let lhs: f64 = r.coeffs.iter().map(|&(j, v)| v * x[j]).sum();
        let scale = r.coeffs.iter().fold(r.rhs.abs().max(1.0), |acc, &(_, v)| acc.max(v.abs()));
        (lhs - r.rhs) / scale
    };
    let eq = problem.eq_rows.iter().map(|r| row(r).abs());
    let ub = problem.ub_rows.iter().map(|r| row(r).max(0.0));
    eq.chain(ub).fold(0.0, f64::max)
}

/// Tableau entries below this magnitude after an update are cancellation noise
/// (rows are equilibrated to unit max-norm) and are flushed to zero.
const DROP_TOL: f64 = 1e-13;

/// Pivot elements below this fraction of their column's largest entry are rejected.
const REL_PIVOT_TOL: f64 = 1e-7;

/// Ceiling for the pricing tolerance when degenerate stalling forces it up.
const MAX_DUAL_TOL: f64 = 1e-5;

/// Smallest entry accepted when pivoting an artificial out after phase one.
const DRIVE_OUT_TOL: f64 = 1e-7;

/// Pivots between basis reinversions.
const REFRESH_EVERY: usize = 64;

struct Tableau {
    m: usize,
    /// Structural columns (split variables plus slacks).
    n_struct: usize,
    /// Total columns, artificials included; rhs is stored separately.
    width: usize,
    a: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    /// Original variable -> (positive column, optional negative column).
    var_cols: Vec<(usize, Option<usize>)>,
    /// Opposite column of a split free variable.
    twin: Vec<Option<usize>>,
    /// Minimisation cost per structural column.
    cost: Vec<f64>,
    /// Per row: sign flip times 1/scale, mapping standard-form duals back.
    row_factor: Vec<f64>,
    /// Rows whose artificial could not be driven out (linearly dependent).
    redundant: Vec<bool>,
    /// Equilibrated structural block and rhs as built, for reinversion.
    a0: Vec<f64>,
    rhs0: Vec<f64>,
    /// Column equilibration factors; tableau column = original column / factor.
    col_scale: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
    bland: bool,
    degenerate_run: usize,
    since_refresh: usize,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn build(problem: &LpProblem, options: &SolverOptions) -> Self {
        let m = problem.num_rows();
        let sign = match problem.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };

        let mut var_cols = Vec::with_capacity(problem.num_vars());
        let mut cost = Vec::new();
        for (j, bound) in problem.bounds.iter().enumerate() {
            let c = sign * problem.cost[j];
            let pos = cost.len();
            cost.push(c);
            let neg = match bound {
                VarBound::NonNegative => None,
                VarBound::Free => {
                    cost.push(-c);
                    Some(pos + 1)
                }
            };
            var_cols.push((pos, neg));
        }
        let first_slack = cost.len();
        let n_struct = first_slack + problem.ub_rows.len();
        cost.resize(n_struct, 0.0);
        let width = n_struct + m;

        let mut a = vec![0.0; m * width];
        let mut rhs = vec![0.0; m];
        let mut row_factor = vec![1.0; m];
        let rows = problem.eq_rows.iter().chain(&problem.ub_rows);
        for (i, row) in rows.enumerate() {
            let scale = row
                .coeffs
                .iter()
                .fold(0.0_f64, |acc, &(_, v)| acc.max(v.abs()));
            let scale = if scale > 0.0 { scale } else { 1.0 };
            let flip = if row.rhs < 0.0 { -1.0 } else { 1.0 };
            let f = flip / scale;
            let r = &mut a[i * width..(i + 1) * width];
            for &(j, v) in &row.coeffs {
                let (pos, neg) = var_cols[j];
                r[pos] += f * v;
                if let Some(neg) = neg {
                    r[neg] -= f * v;
                }
            }
            if i >= problem.eq_rows.len() {
                r[first_slack + i - problem.eq_rows.len()] = flip;
            }
            r[n_struct + i] = 1.0;
            rhs[i] = f * row.rhs;
            row_factor[i] = f;
        }

        // Proxy levels make columns differ by orders of magnitude; equilibrate.
        let mut col_scale = vec![1.0; n_struct];
        for j in 0..first_slack {
            let s = (0..m).fold(0.0_f64, |acc, i| acc.max(a[i * width + j].abs()));
            if s > 0.0 {
                col_scale[j] = s;
                for i in 0..m {
                    a[i * width + j] /= s;
                }
                cost[j] /= s;
            }
        }
        let mut a0 = vec![0.0; m * n_struct];
        for i in 0..m {
            a0[i * n_struct..(i + 1) * n_struct].copy_from_slice(&a[i * width..i * width + n_struct]);
        }
        let rhs0 = rhs.clone();

        let mut twin = vec![None; n_struct];
        for &(pos, neg) in &var_cols {
            if let Some(neg) = neg {
                twin[pos] = Some(neg);
                twin[neg] = Some(pos);
            }
        }

        let max_iterations = if options.max_iterations > 0 {
            options.max_iterations
        } else {
            50 * (m + width) + 1000
        };

        Tableau {
            m,
            n_struct,
            width,
            a,
            rhs,
            basis: (n_struct..n_struct + m).collect(),
            var_cols,
            cost,
            row_factor,
            redundant: vec![false; m],
            twin,
            a0,
            rhs0,
            col_scale,
            iterations: 0,
            max_iterations,
            bland: options.pivot_rule == PivotRule::Bland,
            degenerate_run: 0,
            since_refresh: 0,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.width..(i + 1) * self.width]
    }

    fn objective(&self, col_cost: &[f64]) -> f64 {
        (0..self.m).map(|i| col_cost[self.basis[i]] * self.rhs[i]).sum()
    }

    /// Reduced costs for the given column costs (artificial columns included).
    fn reduced_costs(&self, col_cost: &[f64]) -> Vec<f64> {
        let mut d = col_cost.to_vec();
        for i in 0..self.m {
            let cb = col_cost[self.basis[i]];
            if cb != 0.0 {
                let r = self.row(i);
                for (dj, aij) in d.iter_mut().zip(r) {
                    *dj -= cb * aij;
                }
            }
        }
        d
    }

    fn pivot(&mut self, p: usize, e: usize, d: &mut [f64]) {
        let w = self.width;
        let piv = self.a[p * w + e];
        let inv = 1.0 / piv;
        {
            let prow = &mut self.a[p * w..(p + 1) * w];
            for v in prow.iter_mut() {
                *v *= inv;
            }
            prow[e] = 1.0;
        }
        self.rhs[p] *= inv;
        let prow: Vec<f64> = self.a[p * w..(p + 1) * w].to_vec();
        let prhs = self.rhs[p];
        for i in 0..self.m {
            if i == p {
                continue;
            }
            let f = self.a[i * w + e];
            if f == 0.0 {
                continue;
            }
            let r = &mut self.a[i * w..(i + 1) * w];
            for (v, pv) in r.iter_mut().zip(&prow) {
                *v -= f * pv;
                if v.abs() < DROP_TOL {
                    *v = 0.0;
                }
            }
            r[e] = 0.0;
            self.rhs[i] -= f * prhs;
        }
        let f = d[e];
        if f != 0.0 {
            for (v, pv) in d.iter_mut().zip(&prow) {
                *v -= f * pv;
            }
            d[e] = 0.0;
        }
        self.basis[p] = e;
        self.iterations += 1;
        self.since_refresh += 1;
    }

    /// Rebuild the tableau from the original columns and a fresh inverse of
    /// the current basis, discarding accumulated pivot error. Leaves the
    /// tableau untouched if the basis matrix is numerically singular.
    fn refresh(&mut self, col_cost: &[f64], d: &mut [f64]) {
        let (m, n, w) = (self.m, self.n_struct, self.width);
        self.since_refresh = 0;
        // [B | I] -> [I | B^-1] by Gauss-Jordan with partial pivoting.
        let mut aug = vec![0.0; m * 2 * m];
        for (k, &col) in self.basis.iter().enumerate() {
            for i in 0..m {
                aug[i * 2 * m + k] = if col < n {
                    self.a0[i * n + col]
                } else if col - n == i {
                    1.0
                } else {
                    0.0
                };
            }
        }
        for i in 0..m {
            aug[i * 2 * m + m + i] = 1.0;
        }
        for k in 0..m {
            let (piv_row, piv) = (k..m)
                .map(|i| (i, aug[i * 2 * m + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if piv < 1e-12 {
                return;
            }
            if piv_row != k {
                for c in 0..2 * m {
                    aug.swap(k * 2 * m + c, piv_row * 2 * m + c);
                }
            }
            let inv = 1.0 / aug[k * 2 * m + k];
            for c in 0..2 * m {
                aug[k * 2 * m + c] *= inv;
            }
            for i in 0..m {
                let f = aug[i * 2 * m + k];
                if i != k && f != 0.0 {
                    for c in 0..2 * m {
                        aug[i * 2 * m + c] -= f * aug[k * 2 * m + c];
                    }
                }
            }
        }
        for i in 0..m {
            let binv = &aug[i * 2 * m + m..(i + 1) * 2 * m];
            let row = &mut self.a[i * w..(i + 1) * w];
            row.fill(0.0);
            let mut r = 0.0;
            for (k, &b) in binv.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                for (v, a0) in row[..n].iter_mut().zip(&self.a0[k * n..(k + 1) * n]) {
                    *v += b * a0;
                }
                r += b * self.rhs0[k];
            }
            row[n..].copy_from_slice(binv);
            for v in row.iter_mut() {
                if v.abs() < DROP_TOL {
                    *v = 0.0;
                }
            }
            self.rhs[i] = r;
        }
        for (i, &col) in self.basis.clone().iter().enumerate() {
            for k in 0..m {
                self.a[k * w + col] = if k == i { 1.0 } else { 0.0 };
            }
        }
        self.clear_redundant();
        d.copy_from_slice(&self.reduced_costs(col_cost));
    }

    /// Ratio test for entering column `e`.
    /// `Ok(Some(row))`: pivot row; `Ok(None)`: column unbounded;
    /// `Err(())`: only sub-tolerance pivots available.
    ///
    /// Two passes: the first finds the smallest ratio with each rhs relaxed by
    /// the feasibility tolerance, the second takes the largest pivot among rows
    /// within that bound. Under Bland the exact minimum ratio is used instead,
    /// with lexicographic tie-breaking.
    fn ratio_test(&self, e: usize, opts: &SolverOptions) -> Result<Option<usize>, ()> {
        let w = self.width;
        // Pivots far below the column's largest entry amplify rounding error
        // through the whole tableau; treat them as zero.
        let col_max = (0..self.m).fold(0.0_f64, |acc, i| acc.max(self.a[i * w + e].abs()));
        let tiny = opts.pivot_tol.max(REL_PIVOT_TOL * col_max);
        let mut saw_tiny = false;
        let mut bound = f64::INFINITY;
        for i in 0..self.m {
            let aie = self.a[i * w + e];
            if aie <= 0.0 {
                continue;
            }
            if aie <= tiny {
                saw_tiny = true;
                continue;
            }
            let relax = if self.bland { 0.0 } else { opts.feas_tol };
            bound = bound.min((self.rhs[i].max(0.0) + relax) / aie);
        }
        if bound == f64::INFINITY {
            return if saw_tiny { Err(()) } else { Ok(None) };
        }
        let mut best: Option<usize> = None;
        for i in 0..self.m {
            let aie = self.a[i * w + e];
            if aie <= tiny {
                continue;
            }
            let ratio = self.rhs[i].max(0.0) / aie;
            if ratio > bound + 1e-12 * (1.0 + bound) {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(bi) => {
                    let abe = self.a[bi * w + e];
                    let better = if self.bland {
                        self.lex_less(i, aie, bi, abe)
                    } else if (aie - abe).abs() > 1e-12 * aie.max(abe) {
                        aie > abe
                    } else {
                        self.lex_less(i, aie, bi, abe)
                    };
                    Some(if better { i } else { bi })
                }
            };
        }
        Ok(best)
    }

    /// Dual simplex step on the most negative basic value below `-tol`:
    /// the entering column keeps every reduced cost nonnegative.
    fn dual_pivot(&self, d: &[f64], tol: f64) -> Option<(usize, usize)> {
        let w = self.width;
        let r = (0..self.m)
            .filter(|&i| self.rhs[i] < -tol)
            .min_by(|&x, &y| self.rhs[x].total_cmp(&self.rhs[y]))?;
        let row = &self.a[r * w..r * w + self.n_struct];
        let tiny = 1e-9 * row.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let mut best: Option<(usize, f64, f64)> = None;
        for (j, &arj) in row.iter().enumerate() {
            if arj >= -tiny {
                continue;
            }
            let ratio = d[j].max(0.0) / -arj;
            let better = match best {
                None => true,
                Some((_, br, ba)) => ratio < br - 1e-12 * (1.0 + br) || (ratio <= br + 1e-12 * (1.0 + br) && -arj > ba),
            };
            if better {
                best = Some((j, ratio, -arj));
            }
        }
        best.map(|(j, _, _)| (r, j))
    }

    /// Lexicographic tie-break on `row / pivot` over the inverse-basis block.
    /// Rows of that block are independent, so ties are always resolved and
    /// degenerate pivots cannot cycle.
    fn lex_less(&self, i: usize, ai: f64, k: usize, ak: f64) -> bool {
        let ri = &self.row(i)[self.n_struct..];
        let rk = &self.row(k)[self.n_struct..];
        for (x, y) in ri.iter().zip(rk) {
            let (x, y) = (x / ai, y / ak);
            if (x - y).abs() > 1e-12 * (1.0 + x.abs().max(y.abs())) {
                return x < y;
            }
        }
        false
    }

    fn optimise(
        &mut self,
        col_cost: &[f64],
        d: &mut [f64],
        opts: &SolverOptions,
    ) -> Result<PhaseEnd, LpError> {
        let tol = opts.feas_tol;
        // A split free variable's two columns have opposite reduced costs; if
        // rounding makes both look attractive, neither is.
        let twin = self.twin.clone();
        let mut dual_tol = opts.dual_tol;
        let improving = |d: &[f64], j: usize, dual_tol: f64| d[j] < -dual_tol && twin[j].is_none_or(|t| d[t] > 0.0);
        let stall_limit = 2 * self.m + opts.degenerate_streak;
        let mut best = self.objective(col_cost);
        let mut stall = 0usize;
        let mut dual_steps = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                return Err(LpError::IterationLimitExceeded(self.max_iterations));
            }
            if self.since_refresh >= REFRESH_EVERY {
                self.refresh(col_cost, d);
            }
            let mut candidates: Vec<usize> = (0..self.n_struct).filter(|&j| improving(d, j, dual_tol)).collect();
            if candidates.is_empty() {
                if self.since_refresh > 0 {
                    // Confirm optimality on a freshly inverted basis.
                    self.refresh(col_cost, d);
                    if (0..self.n_struct).any(|j| improving(d, j, dual_tol)) {
                        continue;
                    }
                }
                // Rejected small pivots can leave basic values slightly
                // negative. The basis is dual feasible here, so dual simplex
                // steps restore primal feasibility without losing optimality.
                if dual_steps < 4 * self.m {
                    if let Some((r, j)) = self.dual_pivot(d, tol) {
                        dual_steps += 1;
                        self.pivot(r, j, d);
                        continue;
                    }
                }
                return Ok(PhaseEnd::Optimal);
            }
            if !self.bland {
                candidates.sort_by(|&x, &y| d[x].partial_cmp(&d[y]).unwrap_or(core::cmp::Ordering::Equal).then(x.cmp(&y)));
            }
            let mut chosen = None;
            for &e in &candidates {
                match self.ratio_test(e, opts) {
                    Ok(Some(p)) => {
                        chosen = Some((p, e));
                        break;
                    }
                    Ok(None) => return Ok(PhaseEnd::Unbounded),
                    Err(()) => continue,
                }
            }
            let (p, e) = chosen.ok_or(LpError::NumericalBreakdown)?;
            if self.rhs[p].abs() <= tol {
                self.degenerate_run += 1;
                if !self.bland && self.degenerate_run >= opts.degenerate_streak {
                    self.bland = true;
                    stall = 0;
                }
            } else {
                self.degenerate_run = 0;
            }
            self.pivot(p, e, d);
            let obj = self.objective(col_cost);
            if obj < best - 1e-12 * (1.0 + best.abs()) {
                best = obj;
                stall = 0;
            } else {
                stall += 1;
                if stall >= stall_limit && dual_tol < MAX_DUAL_TOL {
                    // No progress in a long run of pivots: the remaining
                    // candidates are rounding noise in the reduced costs.
                    // The objective has not moved, so stopping here loses nothing.
                    dual_tol *= 10.0;
                    stall = 0;
                }
            }
        }
    }

    /// After phase one, pivot basic artificials out where a structural column
    /// allows it. Rows left with an artificial are linearly dependent; their
    /// structural entries are rounding noise and are cleared so no later pivot
    /// can use them.
    fn drive_out_artificials(&mut self, col_cost: &[f64], d: &mut [f64]) {
        self.refresh(col_cost, d);
        for i in 0..self.m {
            if self.basis[i] < self.n_struct {
                continue;
            }
            let r = self.row(i);
            let mut best: Option<(usize, f64)> = None;
            for (j, &v) in r[..self.n_struct].iter().enumerate() {
                if v.abs() > DRIVE_OUT_TOL && best.is_none_or(|(_, bv)| v.abs() > bv) {
                    best = Some((j, v.abs()));
                }
            }
            match best {
                Some((j, _)) => self.pivot(i, j, d),
                None => self.redundant[i] = true,
            }
        }
        self.clear_redundant();
    }

    fn clear_redundant(&mut self) {
        let (n, w) = (self.n_struct, self.width);
        for i in 0..self.m {
            if self.redundant[i] && self.basis[i] >= n {
                self.a[i * w..i * w + n].fill(0.0);
                self.rhs[i] = 0.0;
            }
        }
    }

    fn run(&mut self, problem: &LpProblem, opts: &SolverOptions) -> Result<LpSolution, LpError> {
        // Phase one: minimise the sum of artificials.
        let mut c1 = vec![0.0; self.width];
        for v in &mut c1[self.n_struct..] {
            *v = 1.0;
        }
        let mut d = self.reduced_costs(&c1);
        self.optimise(&c1, &mut d, opts)?;
        let infeas: f64 = (0..self.m)
            .filter(|&i| self.basis[i] >= self.n_struct)
            .map(|i| self.rhs[i])
            .sum();
        if infeas > opts.feas_tol {
            // Phase-one duals: y' = 1 - d_artificial.
            let ray: Vec<f64> = (0..self.m)
                .map(|i| (1.0 - d[self.n_struct + i]) * self.row_factor[i])
                .collect();
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; problem.num_vars()],
                objective: f64::NAN,
                duals: vec![0.0; self.m],
                farkas_ray: Some(ray),
                iterations: self.iterations,
            });
        }
        self.drive_out_artificials(&c1, &mut d);

        // Phase two.
        let mut c2 = vec![0.0; self.width];
        c2[..self.n_struct].copy_from_slice(&self.cost);
        let mut d = self.reduced_costs(&c2);
        let end = self.optimise(&c2, &mut d, opts)?;
        let x = self.primal_point();
        if let PhaseEnd::Unbounded = end {
            return Ok(LpSolution {
                status: LpStatus::Unbounded,
                x,
                objective: match problem.sense {
                    Sense::Minimize => f64::NEG_INFINITY,
                    Sense::Maximize => f64::INFINITY,
                },
                duals: vec![0.0; self.m],
                farkas_ray: None,
                iterations: self.iterations,
            });
        }
        let sign = match problem.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        // Phase-two duals: y' = -d_artificial, mapped back through scaling and sense.
        let duals: Vec<f64> = (0..self.m)
            .map(|i| sign * (-d[self.n_struct + i]) * self.row_factor[i])
            .collect();
        Ok(LpSolution {
            status: LpStatus::Optimal,
            objective: problem.objective_at(&x),
            x,
            duals,
            farkas_ray: None,
            iterations: self.iterations,
        })
    }

    fn primal_point(&self) -> Vec<f64> {
        let mut col = vec![0.0; self.width];
        for i in 0..self.m {
            col[self.basis[i]] = self.rhs[i];
        }
        self.var_cols
            .iter()
            .map(|&(pos, neg)| {
                let v = col[pos].max(0.0) / self.col_scale[pos];
                match neg {
                    Some(n) => v - col[n].max(0.0) / self.col_scale[n],
                    None => v,
                }
            })
            .collect()
    }
}

/// Residual audit of an optimal solution against its problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub max_eq_residual: f64,
    pub max_ineq_violation: f64,
    pub max_bound_violation: f64,
    /// `|c'x - b'y|`.
    pub duality_mismatch: f64,
    /// Largest violation of dual feasibility (reduced-cost sign and multiplier sign).
    pub max_dual_infeasibility: f64,
    /// Largest `|y_i * slack_i|` over inequality rows.
    pub max_complementarity: f64,
}

pub fn check_solution(problem: &LpProblem, solution: &LpSolution) -> Diagnostics {
    let x = &solution.x;
    let y = &solution.duals;
    let n_eq = problem.eq_rows.len();

    let max_eq_residual = problem
        .eq_rows
        .iter()
        .map(|r| (r.dot(x) - r.rhs).abs())
        .fold(0.0, f64::max);
    let mut max_ineq_violation: f64 = 0.0;
    let mut max_complementarity: f64 = 0.0;
    for (k, r) in problem.ub_rows.iter().enumerate() {
        let slack = r.rhs - r.dot(x);
        max_ineq_violation = max_ineq_violation.max(-slack);
        if let Some(&yk) = y.get(n_eq + k) {
            max_complementarity = max_complementarity.max((yk * slack).abs());
        }
    }
    let max_bound_violation = problem
        .bounds
        .iter()
        .zip(x)
        .filter(|(b, _)| **b == VarBound::NonNegative)
        .map(|(_, v)| -v)
        .fold(0.0, f64::max);

    let dual_obj: f64 = problem
        .eq_rows
        .iter()
        .chain(&problem.ub_rows)
        .zip(y)
        .map(|(r, yi)| r.rhs * yi)
        .sum();
    let duality_mismatch = (problem.objective_at(x) - dual_obj).abs();

    // Reduced costs r_j = c_j - (A'y)_j; sign requirement depends on sense.
    let mut aty = vec![0.0; problem.num_vars()];
    for (r, yi) in problem.eq_rows.iter().chain(&problem.ub_rows).zip(y) {
        for &(j, a) in &r.coeffs {
            aty[j] += a * yi;
        }
    }
    let orient = match problem.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let mut max_dual_infeasibility: f64 = 0.0;
    for ((c, bound), ay) in problem.cost.iter().zip(&problem.bounds).zip(&aty) {
        let red = orient * (c - ay);
        let viol = match bound {
            VarBound::NonNegative => -red,
            VarBound::Free => red.abs(),
        };
        max_dual_infeasibility = max_dual_infeasibility.max(viol);
    }
    for yk in y.iter().skip(n_eq) {
        max_dual_infeasibility = max_dual_infeasibility.max(orient * yk);
    }

    Diagnostics {
        max_eq_residual,
        max_ineq_violation: max_ineq_violation.max(0.0),
        max_bound_violation,
        duality_mismatch,
        max_dual_infeasibility,
        max_complementarity,
    }
}

/// Check that `ray` certifies infeasibility of `problem` at tolerance `tol`.
/// Returns `(max_j of violated (y'A)_j, y'b)`.
pub fn farkas_margin(problem: &LpProblem, ray: &[f64]) -> (f64, f64) {
    let n_eq = problem.eq_rows.len();
    let mut aty = vec![0.0; problem.num_vars()];
    let mut ytb = 0.0;
    for (r, yi) in problem.eq_rows.iter().chain(&problem.ub_rows).zip(ray) {
        ytb += r.rhs * yi;
        for &(j, a) in &r.coeffs {
            aty[j] += a * yi;
        }
    }
    let mut worst: f64 = 0.0;
    for (j, v) in aty.iter().enumerate() {
        let viol = match problem.bounds[j] {
            VarBound::NonNegative => *v,
            VarBound::Free => v.abs(),
        };
        worst = worst.max(viol);
    }
    for yk in ray.iter().skip(n_eq) {
        worst = worst.max(*yk);
    }
    (worst, ytb)
}
