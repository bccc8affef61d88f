//! Two-phase tableau simplex on the standard form `min c·x, A·x = b, x ≥ 0`.
//!
//! Free variables are split into positive/negative parts, inequality rows get
//! surplus columns, and every row receives an artificial variable that forms
//! the phase-1 basis. Artificial columns are kept (but barred from entering)
//! through phase 2 so the row duals can be read off their reduced costs.
//!
//! Pivoting is largest-coefficient with ties to the lowest index, switching
//! permanently to Bland's rule after a run of degenerate pivots. All decisions
//! are deterministic functions of the input, so re-solves are bit-identical.

use super::{LpError, LpProblem, LpSolution, LpStatus, VarBound, TOL_FEAS};
use ndarray::{Array1, Array2};

/// Reduced-cost threshold for entering candidates.
const EPS_REDUCED: f64 = 1e-9;
/// Pivots below this magnitude are numerical breakdown.
const PIVOT_HARD_MIN: f64 = 1e-11;
/// Relative tie window in the ratio test.
const RATIO_TIE: f64 = 1e-9;
/// A pivot with ratio below this counts as degenerate.
const DEGENERATE_RATIO: f64 = 1e-10;
/// Consecutive degenerate pivots before switching to Bland's rule.
const STALL_LIMIT: usize = 12;
/// Hard cap on pivots per phase.
const MAX_PIVOTS: usize = 50_000;

/// Where a standard-form column came from.
#[derive(Debug, Clone, Copy)]
enum ColSource {
    /// Original variable `idx` scaled by `sign` (−1 for the negative part of
    /// a split free variable).
    Var { idx: usize, sign: f64 },
    Surplus,
}

struct StandardForm {
    /// Structural (variable + surplus) columns; artificials sit after these.
    a: Array2<f64>,
    b: Array1<f64>,
    cost: Array1<f64>,
    col_source: Vec<ColSource>,
    /// ±1 per row: sign applied to reach `b ≥ 0`.
    row_flip: Vec<f64>,
    n_ineq: usize,
}

impl StandardForm {
    fn build(lp: &LpProblem) -> StandardForm {
        let n_ineq = lp.n_ineq();
        let n_eq = lp.n_eq();
        let nrows = n_ineq + n_eq;

        let mut col_source = Vec::new();
        for (j, bound) in lp.bounds.iter().enumerate() {
            col_source.push(ColSource::Var { idx: j, sign: 1.0 });
            if *bound == VarBound::Free {
                col_source.push(ColSource::Var { idx: j, sign: -1.0 });
            }
        }
        let n_var_cols = col_source.len();
        for _ in 0..n_ineq {
            col_source.push(ColSource::Surplus);
        }
        let ncols = col_source.len();

        let mut a = Array2::zeros((nrows, ncols));
        let mut b = Array1::zeros(nrows);
        for i in 0..n_ineq {
            for (c, src) in col_source.iter().enumerate().take(n_var_cols) {
                if let ColSource::Var { idx, sign } = src {
                    a[[i, c]] = lp.ineq_lhs[[i, *idx]] * sign;
                }
            }
            b[i] = lp.ineq_rhs[i];
        }
        for (s, i) in (n_ineq..nrows).enumerate() {
            for (c, src) in col_source.iter().enumerate().take(n_var_cols) {
                if let ColSource::Var { idx, sign } = src {
                    a[[i, c]] = lp.eq_lhs[[s, *idx]] * sign;
                }
            }
            b[i] = lp.eq_rhs[s];
        }
        // surplus columns: G·w − s = h
        for i in 0..n_ineq {
            a[[i, n_var_cols + i]] = -1.0;
        }

        let mut row_flip = vec![1.0; nrows];
        for i in 0..nrows {
            if b[i] < 0.0 {
                row_flip[i] = -1.0;
                b[i] = -b[i];
                for c in 0..ncols {
                    a[[i, c]] = -a[[i, c]];
                }
            }
        }

        let mut cost = Array1::zeros(ncols);
        for (c, src) in col_source.iter().enumerate() {
            if let ColSource::Var { idx, sign } = src {
                cost[c] = lp.cost[*idx] * sign;
            }
        }

        StandardForm {
            a,
            b,
            cost,
            col_source,
            row_flip,
            n_ineq,
        }
    }
}

struct Tableau {
    /// `(nrows + 1) × (n_struct + nrows + 1)`; last row holds reduced costs
    /// with `−objective` in its rhs cell, last column holds the rhs.
    t: Array2<f64>,
    basis: Vec<usize>,
    n_struct: usize,
    nrows: usize,
    bland: bool,
    stall: usize,
    pivots: usize,
}

enum Step {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn new(sf: &StandardForm) -> Tableau {
        let nrows = sf.b.len();
        let n_struct = sf.a.ncols();
        let width = n_struct + nrows + 1;
        let mut t = Array2::zeros((nrows + 1, width));
        for i in 0..nrows {
            for c in 0..n_struct {
                t[[i, c]] = sf.a[[i, c]];
            }
            t[[i, n_struct + i]] = 1.0; // artificial
            t[[i, width - 1]] = sf.b[i];
        }
        Tableau {
            t,
            basis: (n_struct..n_struct + nrows).collect(),
            n_struct,
            nrows,
            bland: false,
            stall: 0,
            pivots: 0,
        }
    }

    fn ncols(&self) -> usize {
        self.n_struct + self.nrows
    }

    fn rhs_col(&self) -> usize {
        self.ncols()
    }

    fn objective(&self) -> f64 {
        -self.t[[self.nrows, self.rhs_col()]]
    }

    /// Rebuilds the objective row for `cost_all` (one entry per column):
    /// reduced costs in the body, `−objective` in the rhs cell.
    fn reset_objective(&mut self, cost_all: &Array1<f64>) {
        let rhs = self.rhs_col();
        for c in 0..=rhs {
            self.t[[self.nrows, c]] = if c < rhs { cost_all[c] } else { 0.0 };
        }
        for i in 0..self.nrows {
            let cb = cost_all[self.basis[i]];
            if cb != 0.0 {
                for c in 0..=rhs {
                    self.t[[self.nrows, c]] -= cb * self.t[[i, c]];
                }
            }
        }
    }

    /// Entering column under the active rule, or None at optimality.
    /// Artificial columns never enter.
    fn entering(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for c in 0..self.n_struct {
            let rc = self.t[[self.nrows, c]];
            if rc < -EPS_REDUCED {
                if self.bland {
                    return Some(c);
                }
                match best {
                    Some((_, best_rc)) if rc >= best_rc => {}
                    _ => best = Some((c, rc)),
                }
            }
        }
        best.map(|(c, _)| c)
    }

    /// Ratio test for `col`. Returns the pivot row, `Unbounded`, or a
    /// numerical-failure error when only sub-threshold pivots exist.
    fn leaving(&self, col: usize) -> Result<Result<usize, Step>, LpError> {
        let rhs = self.rhs_col();
        let mut min_ratio = f64::INFINITY;
        let mut any_positive = false;
        for i in 0..self.nrows {
            let aij = self.t[[i, col]];
            if aij > 0.0 {
                any_positive = true;
                if aij > PIVOT_HARD_MIN {
                    min_ratio = min_ratio.min(self.t[[i, rhs]] / aij);
                }
            }
        }
        if !any_positive {
            return Ok(Err(Step::Unbounded));
        }
        if min_ratio.is_infinite() {
            return Err(LpError::NumericalFailure(format!(
                "all pivot candidates in column {col} are below {PIVOT_HARD_MIN:e}"
            )));
        }
        let window = min_ratio + RATIO_TIE * (1.0 + min_ratio.abs());
        let mut pick: Option<usize> = None;
        for i in 0..self.nrows {
            let aij = self.t[[i, col]];
            if aij <= PIVOT_HARD_MIN {
                continue;
            }
            let ratio = self.t[[i, rhs]] / aij;
            if ratio > window {
                continue;
            }
            pick = Some(match pick {
                None => i,
                Some(best) => {
                    if self.bland {
                        // lowest basic variable index
                        if self.basis[i] < self.basis[best] {
                            i
                        } else {
                            best
                        }
                    } else {
                        // largest pivot magnitude, then lowest basic index
                        let (ai, ab) = (self.t[[i, col]], self.t[[best, col]]);
                        if ai > ab || (ai == ab && self.basis[i] < self.basis[best]) {
                            i
                        } else {
                            best
                        }
                    }
                }
            });
        }
        Ok(Ok(pick.expect("ratio window contains the minimizing row")))
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let rhs = self.rhs_col();
        let pivot = self.t[[row, col]];
        for c in 0..=rhs {
            self.t[[row, c]] /= pivot;
        }
        for i in 0..=self.nrows {
            if i == row {
                continue;
            }
            let factor = self.t[[i, col]];
            if factor != 0.0 {
                for c in 0..=rhs {
                    self.t[[i, c]] -= factor * self.t[[row, c]];
                }
            }
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Runs the pivot loop until optimality or unboundedness.
    fn iterate(&mut self) -> Result<Step, LpError> {
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(LpError::NumericalFailure(format!(
                    "pivot count exceeded {MAX_PIVOTS}"
                )));
            }
            if !self.objective().is_finite() {
                return Err(LpError::NumericalFailure(
                    "objective became non-finite during pivoting".to_string(),
                ));
            }
            let Some(col) = self.entering() else {
                return Ok(Step::Optimal);
            };
            let row = match self.leaving(col)? {
                Ok(row) => row,
                Err(step) => return Ok(step),
            };
            let rhs = self.rhs_col();
            let ratio = self.t[[row, rhs]] / self.t[[row, col]];
            if ratio.abs() <= DEGENERATE_RATIO {
                self.stall += 1;
                if self.stall > STALL_LIMIT {
                    self.bland = true;
                }
            } else {
                self.stall = 0;
            }
            self.pivot(row, col);
        }
    }
}

pub(super) fn solve(lp: &LpProblem) -> Result<LpSolution, LpError> {
    let sf = StandardForm::build(lp);
    let mut tab = Tableau::new(&sf);
    let ncols = tab.ncols();

    // Phase 1: minimize the artificial sum.
    let mut phase1_cost = Array1::zeros(ncols);
    for c in tab.n_struct..ncols {
        phase1_cost[c] = 1.0;
    }
    tab.reset_objective(&phase1_cost);
    match tab.iterate()? {
        Step::Optimal => {}
        Step::Unbounded => {
            return Err(LpError::NumericalFailure(
                "phase 1 reported unbounded (objective is bounded below by 0)".to_string(),
            ));
        }
    }
    let scale = 1.0 + sf.b.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if tab.objective() > TOL_FEAS * scale {
        return Ok(LpSolution::non_optimal(LpStatus::Infeasible));
    }

    // Phase 2: original cost; artificials stay as dual readers but never enter.
    let mut phase2_cost = Array1::zeros(ncols);
    for c in 0..tab.n_struct {
        phase2_cost[c] = sf.cost[c];
    }
    tab.reset_objective(&phase2_cost);
    match tab.iterate()? {
        Step::Optimal => {}
        Step::Unbounded => return Ok(LpSolution::non_optimal(LpStatus::Unbounded)),
    }

    // Primal values in original variable space.
    let rhs = tab.rhs_col();
    let mut w = Array1::zeros(lp.nvars());
    for (i, &col) in tab.basis.iter().enumerate() {
        if col < tab.n_struct {
            if let ColSource::Var { idx, sign } = sf.col_source[col] {
                w[idx] += sign * tab.t[[i, rhs]];
            }
        }
    }

    // Row duals from reduced costs of artificial columns, unflipped. Ordering
    // matches the problem statement: inequality rows then equality rows.
    let nrows = tab.nrows;
    let mut duals = Array1::zeros(nrows);
    for i in 0..nrows {
        let rc = tab.t[[nrows, tab.n_struct + i]];
        duals[i] = -rc * sf.row_flip[i];
    }
    // Clamp sign-rule noise on inequality duals.
    for i in 0..sf.n_ineq {
        if duals[i] < 0.0 && duals[i] > -TOL_FEAS {
            duals[i] = 0.0;
        }
    }

    let objective = lp.cost.dot(&w);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        w,
        objective,
        duals,
    })
}
