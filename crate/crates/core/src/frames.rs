//! Weighted frames of vector fields and their commutator structure.
//!
//! A frame is a basis `X_1, ..., X_N` of coordinate vector fields with
//! nondecreasing formal weights. The commutator-table check expands
//! `[X_i, X_j]` back in the frame and measures how much mass lands on
//! components heavier than `sigma_i + sigma_j`; a frame is usable for
//! nilpotentization only when that residual vanishes.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{Weight, Weights};
use crate::linalg;

/// `X = sum_j coeffs[j] d/dx_j` with a formal weight.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub coeffs: Vec<Expr>,
    pub weight: Weight,
}

impl VectorField {
    pub fn new(coeffs: Vec<Expr>, weight: Weight) -> Self {
        VectorField { coeffs, weight }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.coeffs.iter().map(|c| c.eval(x)).collect()
    }
}

/// `[X, Y] = XY - YX`, built symbolically:
/// `[X,Y]_j = sum_i (a_i d_i b_j - b_i d_i a_j)`.
pub fn commutator(x: &VectorField, y: &VectorField) -> VectorField {
    let n = x.dim();
    let coeffs = (0..n)
        .map(|j| {
            let mut sum = Expr::Const(0.0);
            for i in 0..n {
                let term = Expr::sub(
                    Expr::mul(x.coeffs[i].clone(), y.coeffs[j].derive(i + 1)),
                    Expr::mul(y.coeffs[i].clone(), x.coeffs[j].derive(i + 1)),
                );
                sum = Expr::add(sum, term);
            }
            sum
        })
        .collect();
    VectorField::new(coeffs, x.weight + y.weight)
}

/// A basis of `N` vector fields with weights, a base point and a working
/// radius. Construction verifies that the fields span at the base point.
#[derive(Debug, Clone)]
pub struct WeightedFrame {
    fields: Vec<VectorField>,
    weights: Weights,
    base_point: Vec<f64>,
    radius: f64,
}

impl WeightedFrame {
    pub fn new(
        coeff_rows: Vec<Vec<Expr>>,
        weights: Weights,
        base_point: Vec<f64>,
        radius: f64,
    ) -> Result<Self> {
        let n = weights.dim();
        if coeff_rows.len() != n || coeff_rows.iter().any(|r| r.len() != n) {
            return Err(Error::BadInput(format!(
                "expected {n} fields with {n} coefficients each"
            )));
        }
        if base_point.len() != n {
            return Err(Error::BadInput("base point dimension mismatch".to_string()));
        }
        if !(radius > 0.0) {
            return Err(Error::BadInput("radius must be positive".to_string()));
        }
        let fields = coeff_rows
            .into_iter()
            .enumerate()
            .map(|(k, coeffs)| VectorField::new(coeffs, weights.get(k)))
            .collect();
        let frame = WeightedFrame {
            fields,
            weights,
            base_point,
            radius,
        };
        let a = frame.basis_matrix_near(&frame.base_point.clone())?;
        if linalg::det(&a).abs() < 1e-12 {
            return Err(Error::SingularFrame {
                point: frame.base_point.clone(),
            });
        }
        Ok(frame)
    }

    pub fn dim(&self) -> usize {
        self.weights.dim()
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn field(&self, k: usize) -> &VectorField {
        &self.fields[k]
    }

    pub fn base_point(&self) -> &[f64] {
        &self.base_point
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Basis matrix at `x`: column `k` holds `X_k(x)`.
    pub fn basis_matrix(&self, x: &[f64]) -> Result<linalg::Matrix> {
        let evals: Vec<Vec<f64>> = self
            .fields
            .iter()
            .map(|f| f.eval(x))
            .collect::<Result<_>>()?;
        let n = self.dim();
        Ok((0..n)
            .map(|j| (0..n).map(|k| evals[k][j]).collect())
            .collect())
    }

    /// Basis matrix at `x`, falling back to nearby probes when a coefficient
    /// has a removable singularity exactly at `x` (counterexample fields of
    /// the `sin(1/x)` family are undefined on a coordinate hyperplane).
    pub fn basis_matrix_near(&self, x: &[f64]) -> Result<linalg::Matrix> {
        match self.basis_matrix(x) {
            Ok(a) => Ok(a),
            Err(_) => {
                let n = self.dim();
                let h = 1e-7;
                let mut acc = vec![vec![0.0; n]; n];
                let mut count = 0.0;
                for k in 0..n {
                    for sign in [1.0, -1.0] {
                        let mut probe = x.to_vec();
                        probe[k] += sign * h;
                        if let Ok(a) = self.basis_matrix(&probe) {
                            for (ai, bi) in acc.iter_mut().zip(a) {
                                for (av, bv) in ai.iter_mut().zip(bi) {
                                    *av += bv;
                                }
                            }
                            count += 1.0;
                        }
                    }
                }
                if count == 0.0 {
                    return Err(Error::SingularFrame { point: x.to_vec() });
                }
                for row in &mut acc {
                    for v in row.iter_mut() {
                        *v /= count;
                    }
                }
                Ok(acc)
            }
        }
    }

    /// Shift coordinates so the base point becomes the origin.
    pub fn translated_to_origin(&self) -> WeightedFrame {
        if self.base_point.iter().all(|&v| v == 0.0) {
            return self.clone();
        }
        let fields = self
            .fields
            .iter()
            .map(|f| {
                VectorField::new(
                    f.coeffs.iter().map(|c| c.shifted(&self.base_point)).collect(),
                    f.weight,
                )
            })
            .collect();
        WeightedFrame {
            fields,
            weights: self.weights.clone(),
            base_point: vec![0.0; self.dim()],
            radius: self.radius,
        }
    }

    /// Replace the coefficient rows, keeping weights, base point and radius.
    pub fn with_coeffs(&self, coeff_rows: Vec<Vec<Expr>>) -> Result<WeightedFrame> {
        WeightedFrame::new(
            coeff_rows,
            self.weights.clone(),
            self.base_point.clone(),
            self.radius,
        )
    }
}

/// Structure constants `c_ijk(x)` and the residual diagnostics of the
/// commutator-table check.
#[derive(Debug, Clone)]
pub struct TableReport {
    pub valid: bool,
    /// Largest mass found on forbidden slots (`sigma_k > sigma_i + sigma_j`).
    pub max_residual: f64,
    /// Residual tolerance actually applied: `1e-9 * max condition number`.
    pub tolerance: f64,
    pub max_condition: f64,
    /// Grid points where evaluation failed (recorded, not fatal).
    pub skipped_points: Vec<usize>,
    /// `((i, j, k), c_ijk)` at the base point, for `i < j`, 1-based indices.
    pub constants_at_base: Vec<((usize, usize, usize), f64)>,
}

impl TableReport {
    pub fn constant(&self, i: usize, j: usize, k: usize) -> Option<f64> {
        self.constants_at_base
            .iter()
            .find(|((a, b, c), _)| (*a, *b, *c) == (i, j, k))
            .map(|(_, v)| *v)
    }
}

/// Expand every `[X_i, X_j]` in the frame basis over `grid` and check that
/// no mass lands above weight `sigma_i + sigma_j`.
pub fn verify_commutator_table(frame: &WeightedFrame, grid: &[Vec<f64>]) -> Result<TableReport> {
    let n = frame.dim();
    let sigma = frame.weights();
    let mut brackets = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            brackets.push((i, j, commutator(frame.field(i), frame.field(j))));
        }
    }

    let mut max_residual: f64 = 0.0;
    let mut max_condition: f64 = 1.0;
    let mut skipped = Vec::new();

    for (pt_idx, x) in grid.iter().enumerate() {
        let a = match frame.basis_matrix(x) {
            Ok(a) => a,
            Err(_) => {
                skipped.push(pt_idx);
                continue;
            }
        };
        let cond = linalg::cond_1(&a);
        if !cond.is_finite() {
            return Err(Error::SingularFrame { point: x.clone() });
        }
        max_condition = max_condition.max(cond);
        let mut failed = false;
        for (i, j, bracket) in &brackets {
            let rhs = match bracket.eval(x) {
                Ok(v) => v,
                Err(_) => {
                    failed = true;
                    break;
                }
            };
            let c = linalg::solve(&a, &rhs)?;
            let bound = sigma.get(*i) + sigma.get(*j);
            let residual: f64 = (0..n)
                .filter(|&k| sigma.get(k) > bound)
                .map(|k| c[k].abs())
                .sum();
            max_residual = max_residual.max(residual);
        }
        if failed {
            skipped.push(pt_idx);
        }
    }

    // structure constants at the base point (probing past removable holes)
    let a = frame.basis_matrix_near(frame.base_point())?;
    let mut constants = Vec::new();
    for (i, j, bracket) in &brackets {
        let rhs = eval_field_near(bracket, frame.base_point())?;
        let c = linalg::solve(&a, &rhs)?;
        for (k, &v) in c.iter().enumerate() {
            constants.push(((*i + 1, *j + 1, k + 1), v));
        }
    }

    let tolerance = 1e-9 * max_condition;
    Ok(TableReport {
        valid: max_residual <= tolerance,
        max_residual: max_residual.abs(),
        tolerance,
        max_condition,
        skipped_points: skipped,
        constants_at_base: constants,
    })
}

fn eval_field_near(field: &VectorField, x: &[f64]) -> Result<Vec<f64>> {
    match field.eval(x) {
        Ok(v) => Ok(v),
        Err(e) => {
            let h = 1e-7;
            let mut acc = vec![0.0; field.dim()];
            let mut count = 0.0;
            for k in 0..x.len() {
                for sign in [1.0, -1.0] {
                    let mut probe = x.to_vec();
                    probe[k] += sign * h;
                    if let Ok(v) = field.eval(&probe) {
                        for (a, b) in acc.iter_mut().zip(v) {
                            *a += b;
                        }
                        count += 1.0;
                    }
                }
            }
            if count == 0.0 {
                return Err(e);
            }
            Ok(acc.into_iter().map(|v| v / count).collect())
        }
    }
}
