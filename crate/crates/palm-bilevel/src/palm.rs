//! The penalty-and-linearize driver: an outer loop that raises the penalty
//! weight `μ` geometrically until the lower-level duality gap closes, and an
//! inner loop that alternates exact-subproblem reselection with a linearized
//! master step until the upper-decision step stops moving `X`.
//!
//! Every inner iteration appends a [`TraceRecord`]; the trace backs the CSV
//! export and the algorithm-faithfulness checks in the test suite.

use crate::lp_core::{self, LpStatus, TOL_FEAS};
use crate::model::BilevelInstance;
use crate::reformulation::{
    build_init_problem, build_master_lp, build_subproblem_dual, build_subproblem_primal, Iterate,
};
use ndarray::{s, Array1, ArrayView1};
use std::fmt;
use thiserror::Error;

/// Algorithm parameters. Defaults: `mu0 = 1`, `growth = 2`,
/// `eps_opt = eps_apx = 1e-6`, `max_outer = 60`, `max_inner = 100`,
/// `u0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PalmConfig {
    /// Initial penalty weight (> 0).
    pub mu0: f64,
    /// Geometric growth factor applied after every outer iteration (> 1).
    pub growth: f64,
    /// Outer tolerance on the lower-level duality gap.
    pub eps_opt: f64,
    /// Inner tolerance on `‖vec(dX*)‖∞`.
    pub eps_apx: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Starting upper decision; `None` means the zero vector.
    pub u0: Option<Array1<f64>>,
}

impl Default for PalmConfig {
    fn default() -> Self {
        PalmConfig {
            mu0: 1.0,
            growth: 2.0,
            eps_opt: 1e-6,
            eps_apx: 1e-6,
            max_outer: 60,
            max_inner: 100,
            u0: None,
        }
    }
}

/// Termination classification of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PalmStatus {
    /// The duality gap closed within `eps_opt`.
    Converged,
    /// The outer cap was hit with the gap still open; the result carries the
    /// best-gap iterate seen, which is *not* certified bilevel-feasible.
    MaxOuterExceeded,
    /// The linearized master problem became infeasible.
    MasterInfeasible,
    /// An LP solve broke down or a subproblem had no usable optimum.
    NumericalFailure,
}

impl fmt::Display for PalmStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PalmStatus::Converged => "Converged",
            PalmStatus::MaxOuterExceeded => "MaxOuterExceeded",
            PalmStatus::MasterInfeasible => "MasterInfeasible",
            PalmStatus::NumericalFailure => "NumericalFailure",
        })
    }
}

/// One inner iteration. `u_bar`/`y_bar`/`upper_objective` are the values
/// after the master step; `u_before_step` and `lambda_bar` are kept so the
/// exact-feasibility invariants can be re-checked from the trace alone.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub outer_i: usize,
    pub inner_j: usize,
    pub mu: f64,
    /// `e·ȳ − b·λ̄` from the reselected exact subproblem solutions.
    pub gap: f64,
    /// `‖mat(P·du*)‖∞` of this iteration's master step.
    pub dx_inf: f64,
    pub u_bar: Array1<f64>,
    pub y_bar: Array1<f64>,
    /// `cu·ū + d·ȳ` at the post-step `ū`.
    pub upper_objective: f64,
    /// Upper decision the subproblems were solved at (pre-step).
    pub u_before_step: Array1<f64>,
    pub lambda_bar: Array1<f64>,
    /// Set when the inner cap was hit without the step converging.
    pub inner_cap_hit: bool,
}

/// Outcome of [`run_palm`]: status, final iterate, final gap, full trace.
#[derive(Debug, Clone)]
pub struct PalmResult {
    pub status: PalmStatus,
    pub iterate: Iterate,
    pub gap: f64,
    pub trace: Vec<TraceRecord>,
    /// Human-readable context for failure statuses.
    pub detail: Option<String>,
}

impl PalmResult {
    /// `cu·ū + d·ȳ` at the final iterate.
    pub fn upper_objective(&self, inst: &BilevelInstance) -> f64 {
        inst.upper_cost_u.dot(&self.iterate.u_bar) + inst.upper_cost_y.dot(&self.iterate.y_bar)
    }
}

/// Input errors; algorithmic failures are [`PalmStatus`] values instead.
#[derive(Debug, Error)]
pub enum PalmError {
    #[error("invalid instance: {}", .0.join("; "))]
    InvalidInstance(Vec<String>),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Exact (non-linearized) constraint residuals at an iterate, the post-run
/// certificate that a converged answer is genuinely bilevel-feasible.
#[derive(Debug, Clone, Copy)]
pub struct FeasibilityReport {
    /// Worst violation of `(C+X̄)·ȳ ≥ b`.
    pub primal_violation: f64,
    /// Worst residual of `(C+X̄)ᵀ·λ̄ = e` and of `λ̄ ≥ 0`.
    pub dual_violation: f64,
    /// Worst violation of the upper rows `Au·ū + B·ȳ ≥ a`.
    pub upper_violation: f64,
    /// Exact duality gap `e·ȳ − b·λ̄`.
    pub gap: f64,
}

impl FeasibilityReport {
    /// True when every violation is within `tol` and the gap within `gap_tol`.
    pub fn within(&self, tol: f64, gap_tol: f64) -> bool {
        self.primal_violation <= tol
            && self.dual_violation <= tol
            && self.upper_violation <= tol
            && self.gap <= gap_tol
    }
}

/// Evaluates the exact constraints and gap at `(X̄, ȳ, λ̄)`.
pub fn check_bilevel_feasibility(
    inst: &BilevelInstance,
    iterate: &Iterate,
) -> Result<FeasibilityReport, crate::model::ModelError> {
    let cx = inst.lower_matrix_at(iterate.u_bar.view())?;
    let mut primal: f64 = 0.0;
    let prow = cx.dot(&iterate.y_bar);
    for i in 0..inst.m {
        primal = primal.max(inst.lower_rhs[i] - prow[i]);
    }
    let mut dual: f64 = 0.0;
    let drow = cx.t().dot(&iterate.lambda_bar);
    for j in 0..inst.n {
        dual = dual.max((drow[j] - inst.lower_cost[j]).abs());
    }
    for &l in iterate.lambda_bar.iter() {
        dual = dual.max(-l);
    }
    let mut upper: f64 = 0.0;
    let urow = inst.upper_u.dot(&iterate.u_bar) + inst.upper_y.dot(&iterate.y_bar);
    for i in 0..inst.p {
        upper = upper.max(inst.upper_rhs[i] - urow[i]);
    }
    let gap = inst.lower_cost.dot(&iterate.y_bar) - inst.lower_rhs.dot(&iterate.lambda_bar);
    Ok(FeasibilityReport {
        primal_violation: primal.max(0.0),
        dual_violation: dual.max(0.0),
        upper_violation: upper.max(0.0),
        gap,
    })
}

fn fail(status: PalmStatus, iterate: Iterate, gap: f64, trace: Vec<TraceRecord>, detail: String) -> PalmResult {
    PalmResult {
        status,
        iterate,
        gap,
        trace,
        detail: Some(detail),
    }
}

/// `‖mat(P·du)‖∞` of a step in `u`.
fn step_inf_norm(inst: &BilevelInstance, du: ArrayView1<f64>) -> f64 {
    inst.coupling
        .dot(&du)
        .iter()
        .fold(0.0f64, |m, &x| m.max(x.abs()))
}

/// Runs the penalty/linearization loop on a validated instance.
///
/// Outer loop: while the duality gap of the reselected subproblem solutions
/// exceeds `eps_opt` (always entered once), multiply `μ` by `growth` at the
/// end. Inner loop: while the master step moves `X` by more than `eps_apx`
/// (always entered once): reselect `ȳ` from the exact primal subproblem
/// closest to the previous `ȳ`, reselect `λ̄` likewise, then take the master
/// step of minimal `‖du‖₁`.
pub fn run_palm(inst: &BilevelInstance, cfg: &PalmConfig) -> Result<PalmResult, PalmError> {
    inst.validate().map_err(PalmError::InvalidInstance)?;
    if !(cfg.mu0 > 0.0) {
        return Err(PalmError::InvalidConfig(format!("mu0 = {} must be > 0", cfg.mu0)));
    }
    if !(cfg.growth > 1.0) {
        return Err(PalmError::InvalidConfig(format!(
            "growth = {} must be > 1",
            cfg.growth
        )));
    }
    if !(cfg.eps_opt > 0.0) || !(cfg.eps_apx > 0.0) {
        return Err(PalmError::InvalidConfig(
            "eps_opt and eps_apx must be > 0".to_string(),
        ));
    }
    let u0 = match &cfg.u0 {
        Some(u) => {
            if u.len() != inst.r {
                return Err(PalmError::InvalidConfig(format!(
                    "u0 has length {}, expected r = {}",
                    u.len(),
                    inst.r
                )));
            }
            u.clone()
        }
        None => Array1::zeros(inst.r),
    };

    // Builders cannot fail past validation; surface anything unexpected as a
    // NumericalFailure status rather than panicking.
    macro_rules! build {
        ($e:expr, $iter:expr, $gap:expr, $trace:expr) => {
            match $e {
                Ok(v) => v,
                Err(err) => {
                    return Ok(fail(
                        PalmStatus::NumericalFailure,
                        $iter,
                        $gap,
                        $trace,
                        format!("builder failed: {err}"),
                    ))
                }
            }
        };
    }

    let empty_iterate = |u: &Array1<f64>| Iterate {
        u_bar: u.clone(),
        y_bar: Array1::zeros(inst.n),
        lambda_bar: Array1::zeros(inst.m),
    };

    // Initialization: minimize the gap over the feasible slice at u0.
    let init_lp = build!(
        build_init_problem(inst, u0.view()),
        empty_iterate(&u0),
        f64::NAN,
        Vec::new()
    );
    let init = match lp_core::solve_lp(&init_lp) {
        Ok(sol) => sol,
        Err(err) => {
            return Ok(fail(
                PalmStatus::NumericalFailure,
                empty_iterate(&u0),
                f64::NAN,
                Vec::new(),
                format!("initialization solve failed: {err}"),
            ))
        }
    };
    if init.status != LpStatus::Optimal {
        return Ok(fail(
            PalmStatus::NumericalFailure,
            empty_iterate(&u0),
            f64::NAN,
            Vec::new(),
            format!(
                "no feasible primal-dual pair at the starting upper decision \
                 (initialization problem is {:?})",
                init.status
            ),
        ));
    }

    let mut u_bar = u0;
    let mut y_bar = init.w.slice(s![..inst.n]).to_owned();
    let mut lambda_bar = init.w.slice(s![inst.n..]).to_owned();
    let mut gap = inst.lower_cost.dot(&y_bar) - inst.lower_rhs.dot(&lambda_bar);
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut best: (f64, Iterate) = (
        gap,
        Iterate {
            u_bar: u_bar.clone(),
            y_bar: y_bar.clone(),
            lambda_bar: lambda_bar.clone(),
        },
    );
    let du_indices: Vec<usize> = (0..inst.r).collect();
    let du_prev = Array1::zeros(inst.r);

    for outer_i in 0..cfg.max_outer {
        // Exact integer exponent keeps the schedule drift-free.
        let mu = cfg.mu0 * cfg.growth.powi(outer_i as i32);

        for inner_j in 0..cfg.max_inner {
            let snapshot = |u: &Array1<f64>, y: &Array1<f64>, l: &Array1<f64>| Iterate {
                u_bar: u.clone(),
                y_bar: y.clone(),
                lambda_bar: l.clone(),
            };

            // Reselect the exact primal solution closest to the previous one.
            let sp = build!(
                build_subproblem_primal(inst, u_bar.view(), mu),
                snapshot(&u_bar, &y_bar, &lambda_bar),
                gap,
                trace
            );
            let ysol = match lp_core::solve_closest(&sp, y_bar.view()) {
                Ok(sol) if sol.is_optimal() => sol,
                Ok(sol) => {
                    return Ok(fail(
                        PalmStatus::NumericalFailure,
                        snapshot(&u_bar, &y_bar, &lambda_bar),
                        gap,
                        trace,
                        format!("exact primal subproblem is {:?} at the current iterate", sol.status),
                    ))
                }
                Err(err) => {
                    return Ok(fail(
                        PalmStatus::NumericalFailure,
                        snapshot(&u_bar, &y_bar, &lambda_bar),
                        gap,
                        trace,
                        format!("primal reselection failed: {err}"),
                    ))
                }
            };
            y_bar = ysol.w;

            // Reselect the exact dual solution closest to the previous one.
            let sd = build!(
                build_subproblem_dual(inst, u_bar.view()),
                snapshot(&u_bar, &y_bar, &lambda_bar),
                gap,
                trace
            );
            let lsol = match lp_core::solve_closest(&sd, lambda_bar.view()) {
                Ok(sol) if sol.is_optimal() => sol,
                Ok(sol) => {
                    return Ok(fail(
                        PalmStatus::NumericalFailure,
                        snapshot(&u_bar, &y_bar, &lambda_bar),
                        gap,
                        trace,
                        format!("exact dual subproblem is {:?} at the current iterate", sol.status),
                    ))
                }
                Err(err) => {
                    return Ok(fail(
                        PalmStatus::NumericalFailure,
                        snapshot(&u_bar, &y_bar, &lambda_bar),
                        gap,
                        trace,
                        format!("dual reselection failed: {err}"),
                    ))
                }
            };
            lambda_bar = lsol.w;

            gap = inst.lower_cost.dot(&y_bar) - inst.lower_rhs.dot(&lambda_bar);
            if gap < best.0 {
                best = (gap, snapshot(&u_bar, &y_bar, &lambda_bar));
            }

            // Master step of minimal ‖du‖₁ among the master optima.
            let iterate = snapshot(&u_bar, &y_bar, &lambda_bar);
            let master = build!(build_master_lp(inst, &iterate, mu), iterate, gap, trace);
            let msol = match lp_core::solve_closest_on(&master, du_prev.view(), &du_indices) {
                Ok(sol) => sol,
                Err(err) => {
                    return Ok(fail(
                        PalmStatus::NumericalFailure,
                        snapshot(&u_bar, &y_bar, &lambda_bar),
                        gap,
                        trace,
                        format!("master reselection failed: {err}"),
                    ))
                }
            };
            match msol.status {
                LpStatus::Optimal => {}
                LpStatus::Infeasible => {
                    return Ok(fail(
                        PalmStatus::MasterInfeasible,
                        snapshot(&u_bar, &y_bar, &lambda_bar),
                        gap,
                        trace,
                        format!("linearized master infeasible at outer {outer_i}, inner {inner_j}"),
                    ))
                }
                LpStatus::Unbounded => {
                    return Ok(fail(
                        PalmStatus::NumericalFailure,
                        snapshot(&u_bar, &y_bar, &lambda_bar),
                        gap,
                        trace,
                        format!("linearized master unbounded at outer {outer_i}, inner {inner_j}"),
                    ))
                }
            }
            let du = msol.w.slice(s![..inst.r]).to_owned();
            let dx_inf = step_inf_norm(inst, du.view());
            let u_before_step = u_bar.clone();
            u_bar = &u_bar + &du;

            trace.push(TraceRecord {
                outer_i,
                inner_j,
                mu,
                gap,
                dx_inf,
                u_bar: u_bar.clone(),
                y_bar: y_bar.clone(),
                upper_objective: inst.upper_cost_u.dot(&u_bar) + inst.upper_cost_y.dot(&y_bar),
                u_before_step,
                lambda_bar: lambda_bar.clone(),
                inner_cap_hit: false,
            });

            if dx_inf <= cfg.eps_apx {
                break;
            }
            if inner_j + 1 == cfg.max_inner {
                // Cap hit without step convergence: flag it and let the outer
                // loop raise mu anyway.
                trace.last_mut().expect("just pushed").inner_cap_hit = true;
            }
        }

        if gap <= cfg.eps_opt {
            return Ok(PalmResult {
                status: PalmStatus::Converged,
                iterate: Iterate {
                    u_bar,
                    y_bar,
                    lambda_bar,
                },
                gap,
                trace,
                detail: None,
            });
        }
    }

    let (best_gap, best_iterate) = best;
    Ok(PalmResult {
        status: PalmStatus::MaxOuterExceeded,
        iterate: best_iterate,
        gap: best_gap,
        trace,
        detail: Some(format!(
            "outer cap {} reached with gap {best_gap:.6e}; returning the best-gap iterate seen \
             (not certified bilevel-feasible)",
            cfg.max_outer
        )),
    })
}

/// Renders a trace as CSV: header
/// `outer_i,inner_j,mu,gap,dx_inf,upper_obj,u0..u{r-1},y0..y{n-1}`, one row
/// per inner iteration, floats with 17 significant digits.
pub fn trace_to_csv(trace: &[TraceRecord], r: usize, n: usize) -> String {
    let mut out = String::new();
    out.push_str("outer_i,inner_j,mu,gap,dx_inf,upper_obj");
    for i in 0..r {
        out.push_str(&format!(",u{i}"));
    }
    for i in 0..n {
        out.push_str(&format!(",y{i}"));
    }
    out.push('\n');
    for rec in trace {
        out.push_str(&format!(
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            rec.outer_i, rec.inner_j, rec.mu, rec.gap, rec.dx_inf, rec.upper_objective
        ));
        for v in rec.u_bar.iter() {
            out.push_str(&format!(",{v:.16e}"));
        }
        for v in rec.y_bar.iter() {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

/// Weak-duality sanity floor used by the trace invariants: the reselected
/// subproblem solutions are exactly feasible, so their gap cannot fall below
/// `−TOL_FEAS` without an LP-core defect.
pub const GAP_FLOOR: f64 = -TOL_FEAS;
