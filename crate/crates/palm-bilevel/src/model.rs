//! Bilevel problem instances: data model, validation, JSON serialization, and
//! a built-in demonstration instance.
//!
//! An instance couples a linear upper level over a decision vector `u` with a
//! lower-level LP in `y` whose constraint matrix `C + X` depends on the upper
//! decisions through an affine map `vec(X) = P·u + x0`, where `vec` stacks a
//! matrix column by column. With `P = I` and `x0 = 0` the matrix `X` itself is
//! the upper-level decision; structured instances (shared scalars, auxiliary
//! variables with no effect on `X`) use non-square `P`.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from instance construction and serialization.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("JSON parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("matrix {name} is ragged: row {row} has {got} entries, row 0 has {expected}")]
    RaggedMatrix {
        name: &'static str,
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Stacks a matrix into a vector column by column: `vec(X)[i + j·m] = X[i,j]`.
pub fn vec_matrix(x: &Array2<f64>) -> Array1<f64> {
    let (m, _) = x.dim();
    Array1::from_shape_fn(x.len(), |k| x[[k % m, k / m]])
}

/// Inverse of [`vec_matrix`] for an `m × n` target shape.
///
/// Panics if `v.len() != m * n`.
pub fn unvec_matrix(v: ArrayView1<f64>, m: usize, n: usize) -> Array2<f64> {
    assert_eq!(v.len(), m * n, "unvec_matrix: vector length != m*n");
    Array2::from_shape_fn((m, n), |(i, j)| v[i + j * m])
}

/// A bilevel problem instance.
///
/// Upper level: `min cu·u + d·y` subject to `Au·u + B·y ≥ a` and `y` optimal
/// for the lower level. Lower level: `min e·y` subject to `(C + X)·y ≥ b`
/// with `vec(X) = P·u + x0`. The lower-level `y` carries no sign restriction;
/// sign constraints are encoded as rows of `(C + X)·y ≥ b` with zero
/// `X`-coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct BilevelInstance {
    pub name: String,
    /// Lower-level constraint rows (length of `b`, dimension of the duals).
    pub m: usize,
    /// Lower-level variables (length of `y`, `e`, `d`).
    pub n: usize,
    /// Upper-level constraint rows (length of `a`).
    pub p: usize,
    /// Upper-level decision variables (length of `u`).
    pub r: usize,
    /// Fixed lower-level constraint matrix, `m × n`.
    pub lower_matrix: Array2<f64>,
    /// Lower-level right-hand side, length `m`.
    pub lower_rhs: Array1<f64>,
    /// Lower-level cost, length `n`.
    pub lower_cost: Array1<f64>,
    /// Parameterization map, `(m·n) × r`, rows ordered by the column-major
    /// `vec` convention.
    pub coupling: Array2<f64>,
    /// Parameterization offset, length `m·n`.
    pub coupling_offset: Array1<f64>,
    /// Upper objective coefficients on `u`, length `r`.
    pub upper_cost_u: Array1<f64>,
    /// Upper objective coefficients on `y`, length `n`.
    pub upper_cost_y: Array1<f64>,
    /// Upper constraint coefficients on `u`, `p × r`.
    pub upper_u: Array2<f64>,
    /// Upper constraint coefficients on `y`, `p × n`.
    pub upper_y: Array2<f64>,
    /// Upper constraint right-hand side, length `p`.
    pub upper_rhs: Array1<f64>,
}

/// Wire format. Matrices are arrays-of-rows; `P` has `m·n` rows ordered by
/// the column-major `vec` convention.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceJson {
    m: usize,
    n: usize,
    p: usize,
    r: usize,
    #[serde(rename = "C")]
    lower_matrix: Vec<Vec<f64>>,
    b: Vec<f64>,
    e: Vec<f64>,
    #[serde(rename = "P")]
    coupling: Vec<Vec<f64>>,
    x0: Vec<f64>,
    cu: Vec<f64>,
    d: Vec<f64>,
    #[serde(rename = "Au")]
    upper_u: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    upper_y: Vec<Vec<f64>>,
    a: Vec<f64>,
    name: String,
}

/// Builds a dense matrix from rows, using `default_cols` when there are no
/// rows (the column count is otherwise unrecoverable from JSON).
fn rows_to_array(
    name: &'static str,
    rows: &[Vec<f64>],
    default_cols: usize,
) -> Result<Array2<f64>, ModelError> {
    let cols = rows.first().map_or(default_cols, Vec::len);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(ModelError::RaggedMatrix {
                name,
                row: i,
                got: row.len(),
                expected: cols,
            });
        }
    }
    let mut a = Array2::zeros((rows.len(), cols));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            a[[i, j]] = v;
        }
    }
    Ok(a)
}

fn array_to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

impl BilevelInstance {
    /// Parses an instance from its JSON wire format.
    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let w: InstanceJson = serde_json::from_str(s)?;
        Ok(BilevelInstance {
            lower_matrix: rows_to_array("C", &w.lower_matrix, w.n)?,
            lower_rhs: Array1::from(w.b),
            lower_cost: Array1::from(w.e),
            coupling: rows_to_array("P", &w.coupling, w.r)?,
            coupling_offset: Array1::from(w.x0),
            upper_cost_u: Array1::from(w.cu),
            upper_cost_y: Array1::from(w.d),
            upper_u: rows_to_array("Au", &w.upper_u, w.r)?,
            upper_y: rows_to_array("B", &w.upper_y, w.n)?,
            upper_rhs: Array1::from(w.a),
            name: w.name,
            m: w.m,
            n: w.n,
            p: w.p,
            r: w.r,
        })
    }

    /// Serializes to the JSON wire format (pretty-printed).
    pub fn to_json(&self) -> String {
        let w = InstanceJson {
            m: self.m,
            n: self.n,
            p: self.p,
            r: self.r,
            lower_matrix: array_to_rows(&self.lower_matrix),
            b: self.lower_rhs.to_vec(),
            e: self.lower_cost.to_vec(),
            coupling: array_to_rows(&self.coupling),
            x0: self.coupling_offset.to_vec(),
            cu: self.upper_cost_u.to_vec(),
            d: self.upper_cost_y.to_vec(),
            upper_u: array_to_rows(&self.upper_u),
            upper_y: array_to_rows(&self.upper_y),
            a: self.upper_rhs.to_vec(),
            name: self.name.clone(),
        };
        serde_json::to_string_pretty(&w).expect("instance serialization cannot fail")
    }

    /// Checks every dimension invariant and entry finiteness, returning every
    /// violation found rather than stopping at the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut v = Vec::new();
        {
            let mut shape = |name: &str, got: (usize, usize), want: (usize, usize)| {
                if got.0 != want.0 {
                    v.push(format!("{name} row count = {} != {}", got.0, want.0));
                }
                if got.1 != want.1 {
                    v.push(format!("{name} column count = {} != {}", got.1, want.1));
                }
            };
            shape("C", self.lower_matrix.dim(), (self.m, self.n));
            shape("P", self.coupling.dim(), (self.m * self.n, self.r));
            shape("Au", self.upper_u.dim(), (self.p, self.r));
            shape("B", self.upper_y.dim(), (self.p, self.n));
        }
        {
            let mut len = |name: &str, got: usize, want: usize| {
                if got != want {
                    v.push(format!("{name} length = {got} != {want}"));
                }
            };
            len("b", self.lower_rhs.len(), self.m);
            len("e", self.lower_cost.len(), self.n);
            len("x0", self.coupling_offset.len(), self.m * self.n);
            len("cu", self.upper_cost_u.len(), self.r);
            len("d", self.upper_cost_y.len(), self.n);
            len("a", self.upper_rhs.len(), self.p);
        }

        let mats = [
            ("C", &self.lower_matrix),
            ("P", &self.coupling),
            ("Au", &self.upper_u),
            ("B", &self.upper_y),
        ];
        for (name, mat) in mats {
            for ((i, j), &x) in mat.indexed_iter() {
                if !x.is_finite() {
                    v.push(format!("non-finite entry {name}[{i}][{j}] = {x}"));
                }
            }
        }
        let vecs = [
            ("b", &self.lower_rhs),
            ("e", &self.lower_cost),
            ("x0", &self.coupling_offset),
            ("cu", &self.upper_cost_u),
            ("d", &self.upper_cost_y),
            ("a", &self.upper_rhs),
        ];
        for (name, vec) in vecs {
            for (i, &x) in vec.iter().enumerate() {
                if !x.is_finite() {
                    v.push(format!("non-finite entry {name}[{i}] = {x}"));
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// Realizes the coupling map: returns `mat(P·u + x0)` as an `m × n` matrix.
    pub fn materialize_x(&self, u: ArrayView1<f64>) -> Result<Array2<f64>, ModelError> {
        if u.len() != self.r {
            return Err(ModelError::DimensionMismatch(format!(
                "u has length {}, expected r = {}",
                u.len(),
                self.r
            )));
        }
        if self.coupling.dim() != (self.m * self.n, self.r)
            || self.coupling_offset.len() != self.m * self.n
        {
            return Err(ModelError::DimensionMismatch(format!(
                "coupling map is {:?} with offset length {}, expected ({}, {})",
                self.coupling.dim(),
                self.coupling_offset.len(),
                self.m * self.n,
                self.r,
            )));
        }
        let vec_x = self.coupling.dot(&u) + &self.coupling_offset;
        Ok(unvec_matrix(vec_x.view(), self.m, self.n))
    }

    /// Lower-level constraint matrix `C + X` at the upper decision `u`.
    pub fn lower_matrix_at(&self, u: ArrayView1<f64>) -> Result<Array2<f64>, ModelError> {
        Ok(&self.lower_matrix + &self.materialize_x(u)?)
    }
}

/// The built-in demonstration instance: minimize `|x|` subject to `y2 ≤ 1.5`
/// where `(y1, y2)` solves `min y1 + y2` over
/// `(0.5 + x)·y1 + y2 ≥ 3`, `(1 − x)·y1 + 0.5·y2 ≥ 3`, `y ≥ 0`.
///
/// Encoding: `u = (x, t)` with `t` the auxiliary bound on `|x|` (objective
/// `min t`, constraints `t − x ≥ 0` and `t + x ≥ 0`); the sign constraints on
/// `y` are rows 3–4 of the lower level with zero coupling.
pub fn example_instance() -> BilevelInstance {
    let m = 4;
    let n = 2;
    let p = 3;
    let r = 2;
    let lower_matrix =
        Array2::from_shape_vec((m, n), vec![0.5, 1.0, 1.0, 0.5, 1.0, 0.0, 0.0, 1.0]).unwrap();
    let mut coupling = Array2::zeros((m * n, r));
    coupling[[0, 0]] = 1.0; // x enters X[0,0] with +1
    coupling[[1, 0]] = -1.0; // and X[1,0] with -1
    let mut upper_u = Array2::zeros((p, r));
    let mut upper_y = Array2::zeros((p, n));
    upper_y[[0, 1]] = -1.0; // -y2 >= -1.5
    upper_u[[1, 0]] = -1.0; // t - x >= 0
    upper_u[[1, 1]] = 1.0;
    upper_u[[2, 0]] = 1.0; // t + x >= 0
    upper_u[[2, 1]] = 1.0;
    BilevelInstance {
        name: "example".to_string(),
        m,
        n,
        p,
        r,
        lower_matrix,
        lower_rhs: Array1::from(vec![3.0, 3.0, 0.0, 0.0]),
        lower_cost: Array1::from(vec![1.0, 1.0]),
        coupling,
        coupling_offset: Array1::zeros(m * n),
        upper_cost_u: Array1::from(vec![0.0, 1.0]),
        upper_cost_y: Array1::zeros(n),
        upper_u,
        upper_y,
        upper_rhs: Array1::from(vec![-1.5, 0.0, 0.0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn vec_is_column_major() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(vec_matrix(&x).to_vec(), vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn vec_of_zero_matrix() {
        let x = Array2::zeros((3, 5));
        assert_eq!(vec_matrix(&x).to_vec(), vec![0.0; 15]);
    }

    #[test]
    fn vec_of_example_x_encoding() {
        let x = array![[0.1, 0.0], [-0.1, 0.0], [0.0, 0.0], [0.0, 0.0]];
        assert_eq!(
            vec_matrix(&x).to_vec(),
            vec![0.1, -0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn materialize_example_is_sign_split() {
        let inst = example_instance();
        for t in [0.0, -3.0, 7.5] {
            let x = inst.materialize_x(array![0.1, t].view()).unwrap();
            assert_eq!(x, array![[0.1, 0.0], [-0.1, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        }
    }

    #[test]
    fn materialize_identity_coupling_roundtrips() {
        let x = array![[1.0, -2.0], [0.5, 4.0], [3.0, 0.0]];
        let inst = BilevelInstance {
            name: "identity".into(),
            m: 3,
            n: 2,
            p: 0,
            r: 6,
            lower_matrix: Array2::zeros((3, 2)),
            lower_rhs: Array1::zeros(3),
            lower_cost: Array1::zeros(2),
            coupling: Array2::eye(6),
            coupling_offset: Array1::zeros(6),
            upper_cost_u: Array1::zeros(6),
            upper_cost_y: Array1::zeros(2),
            upper_u: Array2::zeros((0, 6)),
            upper_y: Array2::zeros((0, 2)),
            upper_rhs: Array1::zeros(0),
        };
        assert!(inst.validate().is_ok());
        let got = inst.materialize_x(vec_matrix(&x).view()).unwrap();
        assert_eq!(got, x);
    }

    #[test]
    fn materialize_constant_coupling_ignores_u() {
        let c0 = array![[2.0, -1.0], [0.0, 5.0]];
        let inst = BilevelInstance {
            name: "constant".into(),
            m: 2,
            n: 2,
            p: 0,
            r: 3,
            lower_matrix: Array2::zeros((2, 2)),
            lower_rhs: Array1::zeros(2),
            lower_cost: Array1::zeros(2),
            coupling: Array2::zeros((4, 3)),
            coupling_offset: vec_matrix(&c0),
            upper_cost_u: Array1::zeros(3),
            upper_cost_y: Array1::zeros(2),
            upper_u: Array2::zeros((0, 3)),
            upper_y: Array2::zeros((0, 2)),
            upper_rhs: Array1::zeros(0),
        };
        for u in [array![0.0, 0.0, 0.0], array![1.0, -9.0, 2.5]] {
            assert_eq!(inst.materialize_x(u.view()).unwrap(), c0);
        }
    }

    #[test]
    fn materialize_rejects_wrong_u_length() {
        let inst = example_instance();
        assert!(matches!(
            inst.materialize_x(array![1.0].view()),
            Err(ModelError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn example_instance_validates() {
        let inst = example_instance();
        assert!(inst.validate().is_ok());
        assert_eq!((inst.m, inst.n, inst.p, inst.r), (4, 2, 3, 2));
        let x = inst.materialize_x(array![0.0, 0.0].view()).unwrap();
        assert_eq!(x, Array2::<f64>::zeros((4, 2)));
    }

    #[test]
    fn validate_reports_all_violations() {
        let mut inst = example_instance();
        inst.upper_y = Array2::zeros((inst.p - 1, inst.n)); // wrong row count
        inst.lower_matrix[[1, 0]] = f64::NAN;
        let violations = inst.validate().unwrap_err();
        assert!(violations.iter().any(|v| v.contains("B row count")));
        assert!(violations.iter().any(|v| v.contains("C[1][0]")));
        assert_eq!(violations.len(), 2);
    }

    #[test]
    fn json_roundtrip_preserves_instance() {
        let inst = example_instance();
        let parsed = BilevelInstance::from_json(&inst.to_json()).unwrap();
        assert_eq!(parsed, inst);
    }

    #[test]
    fn json_rejects_unknown_fields_and_ragged_rows() {
        assert!(BilevelInstance::from_json("{\"bogus\": 1}").is_err());
        let mut doc: serde_json::Value =
            serde_json::from_str(&example_instance().to_json()).unwrap();
        doc["C"][2] = serde_json::json!([1.0]);
        let err = BilevelInstance::from_json(&doc.to_string()).unwrap_err();
        assert!(matches!(err, ModelError::RaggedMatrix { name: "C", .. }));
    }

    #[test]
    fn empty_upper_block_parses_with_declared_dims() {
        let inst = BilevelInstance {
            name: "no-upper".into(),
            m: 1,
            n: 1,
            p: 0,
            r: 1,
            lower_matrix: array![[1.0]],
            lower_rhs: array![0.0],
            lower_cost: array![1.0],
            coupling: Array2::eye(1),
            coupling_offset: Array1::zeros(1),
            upper_cost_u: array![0.0],
            upper_cost_y: array![0.0],
            upper_u: Array2::zeros((0, 1)),
            upper_y: Array2::zeros((0, 1)),
            upper_rhs: Array1::zeros(0),
        };
        let parsed = BilevelInstance::from_json(&inst.to_json()).unwrap();
        assert!(parsed.validate().is_ok());
        assert_eq!(parsed.upper_u.dim(), (0, 1));
    }
}
