//! Dense LP engine: a deterministic two-phase simplex with primal and dual
//! outputs, plus closest-point reselection among alternative optima.
//!
//! Problems are stated as `min cost·w` subject to `G·w ≥ h`, `H·w = k`, with
//! each variable either non-negative or free. All subproblems of the outer
//! algorithm reduce to this form. Determinism matters here: reselection picks
//! among alternative optima, so identical inputs must yield bit-identical
//! outputs.

mod simplex;

use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};
use std::fmt::Write as _;
use thiserror::Error;

/// Componentwise feasibility tolerance on returned solutions.
pub const TOL_FEAS: f64 = 1e-8;
/// Allowed primal–dual objective disagreement at optimality.
pub const TOL_DUAL: f64 = 1e-6;
/// Slack allowed on the objective-pinning row in reselection.
pub const TOL_FIX: f64 = 1e-7;

/// Errors from the LP engine. Infeasible/unbounded problems are *statuses*,
/// not errors; these are genuine failures.
#[derive(Debug, Error)]
pub enum LpError {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("reselection stage 2 infeasible: {0}")]
    ReselectionInfeasible(String),
    #[error("malformed LP: {0}")]
    Shape(String),
}

/// Lower bound of a variable: `0` (non-negative) or `−∞` (free).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarBound {
    NonNegative,
    Free,
}

/// `min cost·w` subject to `G·w ≥ h` (inequality block), `H·w = k`
/// (equality block), and per-variable lower bounds.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub cost: Array1<f64>,
    /// `G`, shape `n_ineq × nvars`.
    pub ineq_lhs: Array2<f64>,
    /// `h`, length `n_ineq`.
    pub ineq_rhs: Array1<f64>,
    /// `H`, shape `n_eq × nvars`.
    pub eq_lhs: Array2<f64>,
    /// `k`, length `n_eq`.
    pub eq_rhs: Array1<f64>,
    pub bounds: Vec<VarBound>,
}

/// Solve outcome classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of a solve. `w`, `objective` and `duals` are meaningful only when
/// `status == Optimal` (otherwise `w`/`duals` are empty and `objective` NaN).
///
/// `duals` covers inequality rows first, then equality rows; inequality duals
/// are non-negative (up to [`TOL_FEAS`]) and satisfy
/// `h·duals_ineq + k·duals_eq = objective` within [`TOL_DUAL`].
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub w: Array1<f64>,
    pub objective: f64,
    pub duals: Array1<f64>,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub(crate) fn non_optimal(status: LpStatus) -> Self {
        LpSolution {
            status,
            w: Array1::zeros(0),
            objective: f64::NAN,
            duals: Array1::zeros(0),
        }
    }
}

impl LpProblem {
    pub fn nvars(&self) -> usize {
        self.cost.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn n_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    /// Shape and finiteness check; solvers call this on entry.
    pub fn check(&self) -> Result<(), LpError> {
        let nv = self.nvars();
        if self.bounds.len() != nv {
            return Err(LpError::Shape(format!(
                "bounds length {} != nvars {nv}",
                self.bounds.len()
            )));
        }
        if self.ineq_lhs.dim() != (self.n_ineq(), nv) {
            return Err(LpError::Shape(format!(
                "inequality block is {:?}, expected ({}, {nv})",
                self.ineq_lhs.dim(),
                self.n_ineq()
            )));
        }
        if self.eq_lhs.dim() != (self.n_eq(), nv) {
            return Err(LpError::Shape(format!(
                "equality block is {:?}, expected ({}, {nv})",
                self.eq_lhs.dim(),
                self.n_eq()
            )));
        }
        let finite = self.cost.iter().all(|x| x.is_finite())
            && self.ineq_lhs.iter().all(|x| x.is_finite())
            && self.ineq_rhs.iter().all(|x| x.is_finite())
            && self.eq_lhs.iter().all(|x| x.is_finite())
            && self.eq_rhs.iter().all(|x| x.is_finite());
        if !finite {
            return Err(LpError::Shape("non-finite entry in LP data".to_string()));
        }
        Ok(())
    }

    /// Human-readable listing for troubleshooting: one constraint per line,
    /// coefficients with 17 significant digits.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let term = |row: ArrayView1<f64>| {
            row.iter()
                .enumerate()
                .map(|(j, c)| format!("{c:.16e}*w{j}"))
                .collect::<Vec<_>>()
                .join(" + ")
        };
        let _ = writeln!(out, "min {}", term(self.cost.view()));
        for (i, row) in self.ineq_lhs.rows().into_iter().enumerate() {
            let _ = writeln!(out, "ineq[{i}]: {} >= {:.16e}", term(row), self.ineq_rhs[i]);
        }
        for (i, row) in self.eq_lhs.rows().into_iter().enumerate() {
            let _ = writeln!(out, "eq[{i}]: {} = {:.16e}", term(row), self.eq_rhs[i]);
        }
        for (j, b) in self.bounds.iter().enumerate() {
            let _ = writeln!(
                out,
                "w{j} {}",
                match b {
                    VarBound::NonNegative => ">= 0",
                    VarBound::Free => "free",
                }
            );
        }
        out
    }

    /// Worst violation of this problem's constraints at `w` (0 when feasible).
    pub fn max_violation(&self, w: ArrayView1<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        let gw = self.ineq_lhs.dot(&w);
        for i in 0..self.n_ineq() {
            worst = worst.max(self.ineq_rhs[i] - gw[i]);
        }
        let hw = self.eq_lhs.dot(&w);
        for i in 0..self.n_eq() {
            worst = worst.max((hw[i] - self.eq_rhs[i]).abs());
        }
        for (j, b) in self.bounds.iter().enumerate() {
            if *b == VarBound::NonNegative {
                worst = worst.max(-w[j]);
            }
        }
        worst
    }
}

/// Solves the LP with the deterministic two-phase simplex.
///
/// Infeasible and unbounded problems come back as statuses; numerical
/// breakdown (pivot below 1e-11 with no alternative, or a pivot-count blowup)
/// is an [`LpError::NumericalFailure`].
pub fn solve_lp(lp: &LpProblem) -> Result<LpSolution, LpError> {
    lp.check()?;
    simplex::solve(lp)
}

/// Among the optimal solutions of `lp`, returns one minimizing the 1-norm
/// distance to `prev`.
///
/// Two stages: first the plain solve fixes the optimal value `v*`, then a
/// second LP minimizes `‖w − prev‖₁` over the original constraints plus
/// `cost·w ≤ v* + TOL_FIX`, the 1-norm linearized through one auxiliary
/// variable per component. The returned solution carries the reselected
/// point, its objective under the original cost, and the stage-1 duals.
pub fn solve_closest(lp: &LpProblem, prev: ArrayView1<f64>) -> Result<LpSolution, LpError> {
    let all: Vec<usize> = (0..lp.nvars()).collect();
    solve_closest_on(lp, prev, &all)
}

/// [`solve_closest`] with the distance measured only on `measured` (a strictly
/// increasing list of variable indices); `prev` has one entry per measured
/// variable. Unmeasured variables are left to the deterministic pivot rule.
pub fn solve_closest_on(
    lp: &LpProblem,
    prev: ArrayView1<f64>,
    measured: &[usize],
) -> Result<LpSolution, LpError> {
    if prev.len() != measured.len() {
        return Err(LpError::Shape(format!(
            "prev has length {}, expected one entry per measured variable ({})",
            prev.len(),
            measured.len()
        )));
    }
    if measured.iter().any(|&j| j >= lp.nvars()) {
        return Err(LpError::Shape("measured index out of range".to_string()));
    }
    let base = solve_lp(lp)?;
    if !base.is_optimal() {
        return Ok(base);
    }
    let v_star = base.objective;

    let nv = lp.nvars();
    let ns = measured.len();
    let pad = Array2::zeros((lp.n_ineq(), ns));
    let mut extra = Array2::zeros((1 + 2 * ns, nv + ns));
    let mut extra_rhs = Array1::zeros(1 + 2 * ns);
    // cost·w ≤ v* + TOL_FIX, as -cost·w ≥ -(v* + TOL_FIX)
    for j in 0..nv {
        extra[[0, j]] = -lp.cost[j];
    }
    extra_rhs[0] = -(v_star + TOL_FIX);
    // s_t ≥ w_j − prev_t and s_t ≥ prev_t − w_j
    for (t, &j) in measured.iter().enumerate() {
        extra[[1 + 2 * t, j]] = -1.0;
        extra[[1 + 2 * t, nv + t]] = 1.0;
        extra_rhs[1 + 2 * t] = -prev[t];
        extra[[2 + 2 * t, j]] = 1.0;
        extra[[2 + 2 * t, nv + t]] = 1.0;
        extra_rhs[2 + 2 * t] = prev[t];
    }

    let mut cost2 = Array1::zeros(nv + ns);
    for t in 0..ns {
        cost2[nv + t] = 1.0;
    }
    let mut bounds2 = lp.bounds.clone();
    bounds2.extend(std::iter::repeat(VarBound::NonNegative).take(ns));

    let stage2 = LpProblem {
        cost: cost2,
        ineq_lhs: concatenate(
            Axis(0),
            &[
                concatenate(Axis(1), &[lp.ineq_lhs.view(), pad.view()]).unwrap().view(),
                extra.view(),
            ],
        )
        .unwrap(),
        ineq_rhs: concatenate(Axis(0), &[lp.ineq_rhs.view(), extra_rhs.view()]).unwrap(),
        eq_lhs: concatenate(
            Axis(1),
            &[lp.eq_lhs.view(), Array2::zeros((lp.n_eq(), ns)).view()],
        )
        .unwrap(),
        eq_rhs: lp.eq_rhs.clone(),
        bounds: bounds2,
    };

    let sol2 = solve_lp(&stage2)?;
    match sol2.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            // The stage-1 optimum satisfies every stage-2 row, so this can
            // only be a tolerance breakdown.
            return Err(LpError::ReselectionInfeasible(format!(
                "optimal-value pin v* = {v_star:.16e} admits no feasible point"
            )));
        }
        LpStatus::Unbounded => {
            return Err(LpError::NumericalFailure(
                "reselection stage 2 unbounded (distance objective is bounded below)".to_string(),
            ));
        }
    }

    let w = sol2.w.slice(ndarray::s![..nv]).to_owned();
    let objective = lp.cost.dot(&w);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        w,
        objective,
        duals: base.duals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn lp(
        cost: Array1<f64>,
        g: Array2<f64>,
        h: Array1<f64>,
        eq: Option<(Array2<f64>, Array1<f64>)>,
        bounds: Vec<VarBound>,
    ) -> LpProblem {
        let nv = cost.len();
        let (eq_lhs, eq_rhs) = eq.unwrap_or((Array2::zeros((0, nv)), Array1::zeros(0)));
        LpProblem {
            cost,
            ineq_lhs: g,
            ineq_rhs: h,
            eq_lhs,
            eq_rhs,
            bounds,
        }
    }

    #[test]
    fn solves_symmetric_corner() {
        // min y1+y2 s.t. 0.5y1+y2 >= 3, y1+0.5y2 >= 3, y >= 0
        let p = lp(
            array![1.0, 1.0],
            array![[0.5, 1.0], [1.0, 0.5]],
            array![3.0, 3.0],
            None,
            vec![VarBound::NonNegative; 2],
        );
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.w[0] - 2.0).abs() < 1e-9 && (s.w[1] - 2.0).abs() < 1e-9);
        assert!((s.objective - 4.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible() {
        // min 0 s.t. w >= 1 and -w >= 0
        let p = lp(
            array![0.0],
            array![[1.0], [-1.0]],
            array![1.0, 0.0],
            None,
            vec![VarBound::NonNegative],
        );
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        // min -w s.t. w >= 0
        let p = lp(
            array![-1.0],
            Array2::zeros((0, 1)),
            Array1::zeros(0),
            None,
            vec![VarBound::NonNegative],
        );
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn solves_equality_form_dual_side() {
        // max 3l1+3l2 as min -(3l1+3l2) s.t. 0.5l1+l2+l3 = 1, l1+0.5l2+l4 = 1, l >= 0
        let p = lp(
            array![-3.0, -3.0, 0.0, 0.0],
            Array2::zeros((0, 4)),
            Array1::zeros(0),
            Some((
                array![[0.5, 1.0, 1.0, 0.0], [1.0, 0.5, 0.0, 1.0]],
                array![1.0, 1.0],
            )),
            vec![VarBound::NonNegative; 4],
        );
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        let expect = [2.0 / 3.0, 2.0 / 3.0, 0.0, 0.0];
        for (got, want) in s.w.iter().zip(expect) {
            assert!((got - want).abs() < 1e-9, "w = {:?}", s.w);
        }
        assert!((s.objective + 4.0).abs() < 1e-9);
    }

    #[test]
    fn free_variables_take_negative_values() {
        // min w s.t. w >= -5 with w free
        let p = lp(
            array![1.0],
            array![[1.0]],
            array![-5.0],
            None,
            vec![VarBound::Free],
        );
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.w[0] + 5.0).abs() < 1e-9);
    }

    #[test]
    fn duals_certify_objective() {
        let p = lp(
            array![1.0, 1.0],
            array![[0.5, 1.0], [1.0, 0.5]],
            array![3.0, 3.0],
            None,
            vec![VarBound::NonNegative; 2],
        );
        let s = solve_lp(&p).unwrap();
        let dual_obj = p.ineq_rhs.dot(&s.duals);
        assert!((dual_obj - s.objective).abs() < TOL_DUAL);
        assert!(s.duals.iter().all(|&d| d >= -TOL_FEAS));
    }

    #[test]
    fn closest_returns_prev_when_prev_is_optimal() {
        let p = lp(
            array![1.0, 1.0],
            array![[1.0, 1.0]],
            array![1.0],
            None,
            vec![VarBound::NonNegative; 2],
        );
        let s = solve_closest(&p, array![0.5, 0.5].view()).unwrap();
        assert!((s.w[0] - 0.5).abs() < 1e-7 && (s.w[1] - 0.5).abs() < 1e-7);
        let s = solve_closest(&p, array![1.0, 0.0].view()).unwrap();
        assert!((s.w[0] - 1.0).abs() < 1e-7 && (s.w[1] - 0.0).abs() < 1e-7);
    }

    #[test]
    fn closest_lands_on_optimal_face_at_minimal_distance() {
        // prev outside the face: every face point has 1-norm distance 3.
        let p = lp(
            array![1.0, 1.0],
            array![[1.0, 1.0]],
            array![1.0],
            None,
            vec![VarBound::NonNegative; 2],
        );
        let s = solve_closest(&p, array![2.0, 2.0].view()).unwrap();
        assert!((s.w[0] + s.w[1] - 1.0).abs() < 1e-6, "w = {:?}", s.w);
        assert!(s.w.iter().all(|&x| x >= -TOL_FEAS));
        let dist = (2.0 - s.w[0]).abs() + (2.0 - s.w[1]).abs();
        assert!((dist - 3.0).abs() < 1e-6);
        assert!(s.objective <= 1.0 + TOL_FIX);
    }

    #[test]
    fn closest_propagates_non_optimal_status() {
        let p = lp(
            array![0.0],
            array![[1.0], [-1.0]],
            array![1.0, 0.0],
            None,
            vec![VarBound::NonNegative],
        );
        let s = solve_closest(&p, array![0.0].view()).unwrap();
        assert_eq!(s.status, LpStatus::Infeasible);
    }

    #[test]
    fn zero_cost_reselection_minimizes_distance_only() {
        // min 0 over a box: reselection should land on prev exactly.
        let p = lp(
            array![0.0, 0.0],
            array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]],
            array![0.0, 0.0, -2.0, -2.0],
            None,
            vec![VarBound::Free; 2],
        );
        let s = solve_closest(&p, array![1.25, 0.5].view()).unwrap();
        assert!((s.w[0] - 1.25).abs() < 1e-7 && (s.w[1] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn dump_lists_every_row() {
        let p = lp(
            array![1.0, 2.0],
            array![[1.0, 0.0]],
            array![1.0],
            Some((array![[0.0, 1.0]], array![2.0])),
            vec![VarBound::NonNegative, VarBound::Free],
        );
        let text = p.dump();
        assert!(text.contains("ineq[0]"));
        assert!(text.contains("eq[0]"));
        assert!(text.contains("w1 free"));
    }
}
