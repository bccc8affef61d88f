//! Builders for every LP the outer algorithm needs: the initialization
//! problem, the exact primal/dual subproblems at a fixed upper decision, and
//! the linearized master problem that moves the upper decision.
//!
//! All builders are pure functions of the instance and the current iterate.
//! Variable layouts are documented per builder; callers index solutions by
//! those layouts.

use crate::lp_core::{LpProblem, VarBound};
use crate::model::{BilevelInstance, ModelError};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

/// The current linearization point: upper decision `u` (hence
/// `X̄ = mat(P·ū + x0)`), lower primal `ȳ`, and lower dual `λ̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub u_bar: Array1<f64>,
    pub y_bar: Array1<f64>,
    pub lambda_bar: Array1<f64>,
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), ModelError> {
    if got == want {
        Ok(())
    } else {
        Err(ModelError::DimensionMismatch(format!(
            "{what} has length {got}, expected {want}"
        )))
    }
}

/// Initialization problem over `(y, λ)` at the fixed upper decision `u0`:
/// minimize the lower-level duality gap `e·y − b·λ` subject to the upper
/// rows, the exact primal rows at `X₀`, and the exact dual rows at `X₀`.
///
/// Layout: `w = (y[0..n], λ[n..n+m])`; inequality rows are the `p` upper rows
/// followed by the `m` primal rows; equality rows are the `n` dual rows.
pub fn build_init_problem(
    inst: &BilevelInstance,
    u0: ArrayView1<f64>,
) -> Result<LpProblem, ModelError> {
    let (m, n, p) = (inst.m, inst.n, inst.p);
    let cx = inst.lower_matrix_at(u0)?;

    let mut ineq_lhs = Array2::zeros((p + m, n + m));
    ineq_lhs.slice_mut(s![..p, ..n]).assign(&inst.upper_y);
    ineq_lhs.slice_mut(s![p.., ..n]).assign(&cx);
    let mut ineq_rhs = Array1::zeros(p + m);
    ineq_rhs
        .slice_mut(s![..p])
        .assign(&(&inst.upper_rhs - &inst.upper_u.dot(&u0)));
    ineq_rhs.slice_mut(s![p..]).assign(&inst.lower_rhs);

    let mut eq_lhs = Array2::zeros((n, n + m));
    eq_lhs.slice_mut(s![.., n..]).assign(&cx.t());

    let mut cost = Array1::zeros(n + m);
    cost.slice_mut(s![..n]).assign(&inst.lower_cost);
    cost.slice_mut(s![n..]).assign(&(-&inst.lower_rhs));

    let mut bounds = vec![VarBound::Free; n];
    bounds.extend(std::iter::repeat(VarBound::NonNegative).take(m));

    Ok(LpProblem {
        cost,
        ineq_lhs,
        ineq_rhs,
        eq_lhs,
        eq_rhs: inst.lower_cost.clone(),
        bounds,
    })
}

/// Exact primal subproblem over `y` at `ū`: `min (d + μ·e)·y` subject to the
/// upper rows and `(C + X̄)·y ≥ b`.
pub fn build_subproblem_primal(
    inst: &BilevelInstance,
    u_bar: ArrayView1<f64>,
    mu: f64,
) -> Result<LpProblem, ModelError> {
    let (m, n, p) = (inst.m, inst.n, inst.p);
    let cx = inst.lower_matrix_at(u_bar)?;

    let mut ineq_lhs = Array2::zeros((p + m, n));
    ineq_lhs.slice_mut(s![..p, ..]).assign(&inst.upper_y);
    ineq_lhs.slice_mut(s![p.., ..]).assign(&cx);
    let mut ineq_rhs = Array1::zeros(p + m);
    ineq_rhs
        .slice_mut(s![..p])
        .assign(&(&inst.upper_rhs - &inst.upper_u.dot(&u_bar)));
    ineq_rhs.slice_mut(s![p..]).assign(&inst.lower_rhs);

    Ok(LpProblem {
        cost: &inst.upper_cost_y + &(mu * &inst.lower_cost),
        ineq_lhs,
        ineq_rhs,
        eq_lhs: Array2::zeros((0, n)),
        eq_rhs: Array1::zeros(0),
        bounds: vec![VarBound::Free; n],
    })
}

/// Exact dual subproblem over `λ ≥ 0` at `ū`: maximize `b·λ` (as
/// `min −b·λ`) subject to `(C + X̄)ᵀ·λ = e`.
pub fn build_subproblem_dual(
    inst: &BilevelInstance,
    u_bar: ArrayView1<f64>,
) -> Result<LpProblem, ModelError> {
    let cx = inst.lower_matrix_at(u_bar)?;
    Ok(LpProblem {
        cost: -&inst.lower_rhs,
        ineq_lhs: Array2::zeros((0, inst.m)),
        ineq_rhs: Array1::zeros(0),
        eq_lhs: cx.t().to_owned(),
        eq_rhs: inst.lower_cost.clone(),
        bounds: vec![VarBound::NonNegative; inst.m],
    })
}

/// First-order expansion of the bilinear product `X·y` around `(X̄, ȳ)`.
///
/// Returns `(exact, approx, dropped)` with
/// `exact = (X̄ + dX)(ȳ + dy)`, `approx = X̄(ȳ + dy) + dX·ȳ`, and
/// `dropped = dX·dy`, so `exact = approx + dropped` identically.
pub fn linearize_expansion(
    x_bar: ArrayView2<f64>,
    y_bar: ArrayView1<f64>,
    dx: ArrayView2<f64>,
    dy: ArrayView1<f64>,
) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
    let y_new = &y_bar + &dy;
    let exact = (&x_bar + &dx).dot(&y_new);
    let approx = x_bar.dot(&y_new) + dx.dot(&y_bar);
    let dropped = dx.dot(&dy);
    (exact, approx, dropped)
}

/// Coupling of a `du` step into the primal rows: `m × r` matrix `K` with
/// `K·du = mat(P·du)·ȳ`.
fn primal_step_coupling(inst: &BilevelInstance, y_bar: ArrayView1<f64>) -> Array2<f64> {
    let (m, n, r) = (inst.m, inst.n, inst.r);
    let mut k = Array2::zeros((m, r));
    for i in 0..m {
        for col in 0..r {
            let mut acc = 0.0;
            for j in 0..n {
                acc += inst.coupling[[i + j * m, col]] * y_bar[j];
            }
            k[[i, col]] = acc;
        }
    }
    k
}

/// Coupling of a `du` step into the dual rows: `n × r` matrix `L` with
/// `L·du = mat(P·du)ᵀ·λ̄`.
fn dual_step_coupling(inst: &BilevelInstance, lambda_bar: ArrayView1<f64>) -> Array2<f64> {
    let (m, n, r) = (inst.m, inst.n, inst.r);
    let mut l = Array2::zeros((n, r));
    for j in 0..n {
        for col in 0..r {
            let mut acc = 0.0;
            for i in 0..m {
                acc += inst.coupling[[i + j * m, col]] * lambda_bar[i];
            }
            l[[j, col]] = acc;
        }
    }
    l
}

/// Linearized master problem over `(du, y, λ)` at the iterate, with penalty
/// weight `μ` on the duality gap.
///
/// Layout: `w = (du[0..r], y[r..r+n], λ[r+n..r+n+m])`, `du` and `y` free,
/// `λ ≥ 0`. Rows:
/// - upper (inequality): `Au·du + B·y ≥ a − Au·ū`
/// - linearized primal (inequality): `K·du + (C+X̄)·y ≥ b`
/// - linearized dual (equality): `L·du + (C+X̄)ᵀ·λ = e`
///
/// Cost is `cu·du + (d + μe)·y − μb·λ`; the constant `cu·ū` is omitted (it
/// does not affect the argmin) and reporting adds it back separately.
pub fn build_master_lp(
    inst: &BilevelInstance,
    iterate: &Iterate,
    mu: f64,
) -> Result<LpProblem, ModelError> {
    let (m, n, p, r) = (inst.m, inst.n, inst.p, inst.r);
    check_len("y_bar", iterate.y_bar.len(), n)?;
    check_len("lambda_bar", iterate.lambda_bar.len(), m)?;
    let cx = inst.lower_matrix_at(iterate.u_bar.view())?;
    let k = primal_step_coupling(inst, iterate.y_bar.view());
    let l = dual_step_coupling(inst, iterate.lambda_bar.view());

    let nv = r + n + m;
    let mut ineq_lhs = Array2::zeros((p + m, nv));
    ineq_lhs.slice_mut(s![..p, ..r]).assign(&inst.upper_u);
    ineq_lhs.slice_mut(s![..p, r..r + n]).assign(&inst.upper_y);
    ineq_lhs.slice_mut(s![p.., ..r]).assign(&k);
    ineq_lhs.slice_mut(s![p.., r..r + n]).assign(&cx);
    let mut ineq_rhs = Array1::zeros(p + m);
    ineq_rhs
        .slice_mut(s![..p])
        .assign(&(&inst.upper_rhs - &inst.upper_u.dot(&iterate.u_bar)));
    ineq_rhs.slice_mut(s![p..]).assign(&inst.lower_rhs);

    let mut eq_lhs = Array2::zeros((n, nv));
    eq_lhs.slice_mut(s![.., ..r]).assign(&l);
    eq_lhs.slice_mut(s![.., r + n..]).assign(&cx.t());

    let mut cost = Array1::zeros(nv);
    cost.slice_mut(s![..r]).assign(&inst.upper_cost_u);
    cost.slice_mut(s![r..r + n])
        .assign(&(&inst.upper_cost_y + &(mu * &inst.lower_cost)));
    cost.slice_mut(s![r + n..]).assign(&(-mu * &inst.lower_rhs));

    let mut bounds = vec![VarBound::Free; r + n];
    bounds.extend(std::iter::repeat(VarBound::NonNegative).take(m));

    Ok(LpProblem {
        cost,
        ineq_lhs,
        ineq_rhs,
        eq_lhs,
        eq_rhs: inst.lower_cost.clone(),
        bounds,
    })
}

/// Pins a block of variables of `lp` to fixed values by appending equality
/// rows. Test and analysis helper (e.g. evaluating the master at `du = 0`).
pub fn pin_variables(lp: &LpProblem, pins: &[(usize, f64)]) -> LpProblem {
    let mut out = lp.clone();
    let nv = lp.nvars();
    let mut rows = Array2::zeros((pins.len(), nv));
    let mut rhs = Array1::zeros(pins.len());
    for (t, &(j, v)) in pins.iter().enumerate() {
        rows[[t, j]] = 1.0;
        rhs[t] = v;
    }
    out.eq_lhs = ndarray::concatenate(ndarray::Axis(0), &[lp.eq_lhs.view(), rows.view()]).unwrap();
    out.eq_rhs = ndarray::concatenate(ndarray::Axis(0), &[lp.eq_rhs.view(), rhs.view()]).unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::example_instance;
    use ndarray::array;

    #[test]
    fn linearize_zero_perturbation_is_exact() {
        let x_bar = array![[1.0, 2.0], [3.0, 4.0]];
        let y_bar = array![1.0, -1.0];
        let zero_dx = Array2::zeros((2, 2));
        let zero_dy = Array1::zeros(2);
        let (exact, approx, dropped) =
            linearize_expansion(x_bar.view(), y_bar.view(), zero_dx.view(), zero_dy.view());
        assert_eq!(exact, x_bar.dot(&y_bar));
        assert_eq!(approx, exact);
        assert_eq!(dropped, Array1::<f64>::zeros(2));
    }

    #[test]
    fn linearize_is_exact_when_dx_is_zero() {
        let x_bar = array![[1.0, 0.5], [-2.0, 4.0], [0.0, 1.0]];
        let y_bar = array![2.0, -3.0];
        let dy = array![0.7, 1.3];
        let zero_dx = Array2::zeros((3, 2));
        let (exact, approx, dropped) =
            linearize_expansion(x_bar.view(), y_bar.view(), zero_dx.view(), dy.view());
        for i in 0..3 {
            assert!((exact[i] - approx[i]).abs() < 1e-12);
            assert_eq!(dropped[i], 0.0);
        }
    }

    #[test]
    fn linearize_identity_on_fixed_values() {
        let x_bar = array![[1.0, -2.0], [0.5, 3.0], [2.0, 2.0]];
        let dx = array![[0.1, 0.2], [-0.3, 0.4], [0.0, -0.5]];
        let y_bar = array![1.5, -0.5];
        let dy = array![-0.25, 0.75];
        let (exact, approx, dropped) =
            linearize_expansion(x_bar.view(), y_bar.view(), dx.view(), dy.view());
        for i in 0..3 {
            assert!((exact[i] - approx[i] - dropped[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn init_problem_has_expected_shape() {
        let inst = example_instance();
        let lp = build_init_problem(&inst, array![0.0, 0.0].view()).unwrap();
        assert_eq!(lp.nvars(), inst.n + inst.m);
        assert_eq!(lp.n_ineq(), inst.p + inst.m);
        assert_eq!(lp.n_eq(), inst.n);
        assert!(lp.check().is_ok());
    }

    #[test]
    fn master_couplings_match_materialized_step() {
        let inst = example_instance();
        let y_bar = array![3.0, 1.5];
        let lambda_bar = array![2.0 / 3.0, 2.0 / 3.0, 0.0, 0.0];
        let du = array![0.05, -1.0];
        let dx = inst.materialize_x(du.view()).unwrap(); // x0 = 0 here
        let k = primal_step_coupling(&inst, y_bar.view());
        let l = dual_step_coupling(&inst, lambda_bar.view());
        let k_du = k.dot(&du);
        let dx_y = dx.dot(&y_bar);
        for i in 0..inst.m {
            assert!((k_du[i] - dx_y[i]).abs() < 1e-12);
        }
        let l_du = l.dot(&du);
        let dxt_l = dx.t().dot(&lambda_bar);
        for j in 0..inst.n {
            assert!((l_du[j] - dxt_l[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn master_with_zero_bars_loses_step_coupling() {
        let inst = example_instance();
        let iterate = Iterate {
            u_bar: Array1::zeros(inst.r),
            y_bar: Array1::zeros(inst.n),
            lambda_bar: Array1::zeros(inst.m),
        };
        let lp = build_master_lp(&inst, &iterate, 1.0).unwrap();
        for i in inst.p..inst.p + inst.m {
            for c in 0..inst.r {
                assert_eq!(lp.ineq_lhs[[i, c]], 0.0);
            }
        }
        for i in 0..inst.n {
            for c in 0..inst.r {
                assert_eq!(lp.eq_lhs[[i, c]], 0.0);
            }
        }
    }

    #[test]
    fn builders_reject_wrong_iterate_lengths() {
        let inst = example_instance();
        let bad = Iterate {
            u_bar: Array1::zeros(inst.r),
            y_bar: Array1::zeros(inst.n + 1),
            lambda_bar: Array1::zeros(inst.m),
        };
        assert!(build_master_lp(&inst, &bad, 1.0).is_err());
        assert!(build_subproblem_primal(&inst, array![0.0].view(), 1.0).is_err());
    }
}
