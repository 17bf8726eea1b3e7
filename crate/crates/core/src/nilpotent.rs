//! Homogeneous approximation of vector fields.
//!
//! A field of weight `r` rescales as component `j` of
//! `eps^{r - sigma_j} a_j(delta_eps x)`; the numeric path probes that along
//! a schedule, the symbolic path extracts the weighted-homogeneous Taylor
//! part of each coefficient directly. On smooth frames the two must agree,
//! which is one of the standing cross-checks of the gallery.

use num_rational::Ratio;
use rayon::prelude::*;
use serde::Serialize;

use crate::charts::{exp_map, FlowIntegrator};
use crate::convergence::{classify, ConvergenceReport, Schedule, TolerancePolicy, Verdict};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::frames::{commutator, verify_commutator_table, VectorField, WeightedFrame};
use crate::geometry::{dilate, eps_pow, multiindices_with_weight, Weight, Weights};
use crate::linalg;
use crate::sampling;

/// Evaluator for `(delta_eps^{-1})_* eps^r X(delta_eps x)`.
#[derive(Debug, Clone)]
pub struct RescaledField<'a> {
    pub field: &'a VectorField,
    pub degree: Weight,
    pub eps: f64,
    pub sigma: &'a Weights,
}

impl<'a> RescaledField<'a> {
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let scaled = dilate(x, self.eps, self.sigma)?;
        let raw = self.field.eval(&scaled)?;
        Ok(raw
            .into_iter()
            .enumerate()
            .map(|(j, v)| eps_pow(self.eps, self.degree - self.sigma.get(j)) * v)
            .collect())
    }
}

/// Rescale `field` to degree `r` at dilation parameter `eps`.
pub fn rescale_field<'a>(
    field: &'a VectorField,
    degree: Weight,
    eps: f64,
    sigma: &'a Weights,
) -> Result<RescaledField<'a>> {
    if !(eps > 0.0) {
        return Err(Error::NonpositiveEpsilon(eps));
    }
    Ok(RescaledField {
        field,
        degree,
        eps,
        sigma,
    })
}

/// Numeric nilpotentization outcome. Sample traces are stored per field,
/// flattened grid-point-major then component.
#[derive(Debug, Clone, Serialize)]
pub struct NumericNilpotentization {
    pub grid: Vec<Vec<f64>>,
    pub per_field: Vec<ConvergenceReport>,
    pub verdict: Verdict,
    /// `limits[k][p][j]`: component `j` of the limit of field `k` at grid
    /// point `p`; present only when every sequence converged.
    pub limits: Option<Vec<Vec<Vec<f64>>>>,
}

/// Default nilpotentization grid: low-discrepancy interior points plus the
/// coordinate axis points, which expose oscillating counterexamples.
pub fn default_grid(sigma: &Weights, radius: f64) -> Vec<Vec<f64>> {
    let mut grid = sampling::low_discrepancy_box(sigma, radius, 32);
    grid.extend(sampling::axis_points(sigma, radius, 0.8));
    grid
}

/// Probe the rescaled-field limits of a whole frame over a grid.
///
/// Refuses frames whose commutator table has residual mass above weight
/// `sigma_i + sigma_j`; the limits only mean something for genuine frames.
pub fn nilpotentize_numeric(
    frame: &WeightedFrame,
    schedule: &Schedule,
    grid: &[Vec<f64>],
    policy: &TolerancePolicy,
) -> Result<NumericNilpotentization> {
    let table = verify_commutator_table(frame, grid)?;
    if !table.valid {
        return Err(Error::InvalidFrame(format!(
            "commutator residual {} exceeds tolerance {}",
            table.max_residual, table.tolerance
        )));
    }
    let frame = frame.translated_to_origin();
    let sigma = frame.weights().clone();
    let epsilons = schedule.epsilons();
    let n = frame.dim();

    let per_field: Vec<ConvergenceReport> = frame
        .fields()
        .par_iter()
        .map(|field| {
            let samples: Vec<_> = grid
                .iter()
                .flat_map(|x| {
                    let rows: Vec<Vec<Option<f64>>> = {
                        // one evaluation per eps gives all N components
                        let per_eps: Vec<Option<Vec<f64>>> = epsilons
                            .iter()
                            .map(|&eps| {
                                rescale_field(field, field.weight, eps, &sigma)
                                    .and_then(|r| r.eval(x))
                                    .ok()
                            })
                            .collect();
                        (0..n)
                            .map(|j| {
                                per_eps
                                    .iter()
                                    .map(|v| v.as_ref().map(|v| v[j]))
                                    .collect()
                            })
                            .collect()
                    };
                    rows.into_iter()
                        .map(|values| classify(&values, policy, schedule.ratio))
                        .collect::<Vec<_>>()
                })
                .collect();
            ConvergenceReport::aggregate(epsilons.clone(), samples)
        })
        .collect();

    let verdict = if per_field.iter().any(|r| r.verdict == Verdict::Diverged) {
        Verdict::Diverged
    } else if per_field.iter().all(|r| r.verdict == Verdict::Converged) {
        Verdict::Converged
    } else {
        Verdict::Inconclusive
    };

    let limits = (verdict == Verdict::Converged).then(|| {
        per_field
            .iter()
            .map(|rep| {
                rep.samples
                    .chunks(n)
                    .map(|row| row.iter().map(|s| s.limit.unwrap()).collect())
                    .collect()
            })
            .collect()
    });

    Ok(NumericNilpotentization {
        grid: grid.to_vec(),
        per_field,
        verdict,
        limits,
    })
}

/// Weighted-homogeneous Taylor part of one coefficient: the polynomial
/// `sum_{sigma(alpha) = w} D^alpha a(0)/alpha! x^alpha`.
fn homogeneous_taylor_part(a: &Expr, w: Weight, sigma: &Weights) -> Result<Expr> {
    if w < Ratio::from_integer(0) {
        return Ok(Expr::Const(0.0));
    }
    let mut out = Expr::Const(0.0);
    for alpha in multiindices_with_weight(sigma, w) {
        let value = a.partial_at_zero(alpha.entries())?;
        let coeff = value / alpha.factorial();
        if coeff != 0.0 {
            out = Expr::add(out, Expr::monomial(coeff, alpha.entries()));
        }
    }
    Ok(out)
}

/// Symbolic nilpotentization: every coefficient of every field is replaced
/// by its weighted-homogeneous part of degree `sigma_j - sigma_k`. The
/// output frame is homogeneous under the dilations by construction.
pub fn nilpotentize_symbolic(frame: &WeightedFrame) -> Result<WeightedFrame> {
    let frame = frame.translated_to_origin();
    let sigma = frame.weights();
    let n = frame.dim();
    let mut rows = Vec::with_capacity(n);
    for (k, field) in frame.fields().iter().enumerate() {
        let mut coeffs = Vec::with_capacity(n);
        for j in 0..n {
            let w = sigma.get(j) - sigma.get(k);
            coeffs.push(homogeneous_taylor_part(&field.coeffs[j], w, sigma)?);
        }
        rows.push(coeffs);
    }
    frame.with_coeffs(rows)
}

/// Graded-structure diagnostics of a homogeneous frame.
#[derive(Debug, Clone, Serialize)]
pub struct GradedReport {
    pub pass: bool,
    /// Largest coefficient seen on slots with `sigma_k != sigma_i + sigma_j`.
    pub max_offgrade: f64,
    /// Largest variance of a graded-slot coefficient across the grid.
    pub max_variance: f64,
    /// Largest deviation of a graded-slot coefficient from `c_ijk` of the
    /// original frame at the base point.
    pub max_constant_mismatch: f64,
    /// `((i, j, k), mean coefficient)` on graded slots, 1-based.
    pub constants: Vec<((usize, usize, usize), f64)>,
}

/// Expand `[Xhat_i, Xhat_j]` in the `Xhat` basis over a grid: graded slots
/// (`sigma_k = sigma_i + sigma_j`) must be constant and equal to the
/// original structure constants at the base point; all other slots vanish.
pub fn check_graded_structure(
    nilpotentized: &WeightedFrame,
    original: &WeightedFrame,
) -> Result<GradedReport> {
    let sigma = nilpotentized.weights();
    let n = nilpotentized.dim();
    let grid = sampling::low_discrepancy_box(sigma, 0.5, 50);
    let base_table = verify_commutator_table(original, &[original.base_point().to_vec()])?;

    let mut max_offgrade: f64 = 0.0;
    let mut max_variance: f64 = 0.0;
    let mut max_mismatch: f64 = 0.0;
    let mut constants = Vec::new();

    for i in 0..n {
        for j in i + 1..n {
            let bracket = commutator(nilpotentized.field(i), nilpotentized.field(j));
            let target = sigma.get(i) + sigma.get(j);
            let mut per_slot: Vec<Vec<f64>> = vec![Vec::new(); n];
            for x in &grid {
                let a = nilpotentized.basis_matrix(x)?;
                if linalg::det(&a).abs() < 1e-14 {
                    return Err(Error::SingularFrame { point: x.clone() });
                }
                let c = linalg::solve(&a, &bracket.eval(x)?)?;
                for (k, v) in c.into_iter().enumerate() {
                    per_slot[k].push(v);
                }
            }
            for (k, values) in per_slot.iter().enumerate() {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                if sigma.get(k) == target {
                    let variance = values
                        .iter()
                        .map(|v| (v - mean).powi(2))
                        .sum::<f64>()
                        / values.len() as f64;
                    max_variance = max_variance.max(variance);
                    let reference = base_table.constant(i + 1, j + 1, k + 1).unwrap_or(0.0);
                    max_mismatch = max_mismatch.max((mean - reference).abs());
                    constants.push(((i + 1, j + 1, k + 1), mean));
                } else {
                    let worst = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    max_offgrade = max_offgrade.max(worst);
                }
            }
        }
    }

    Ok(GradedReport {
        pass: max_offgrade < 1e-10 && max_variance < 1e-10 && max_mismatch < 1e-6,
        max_offgrade,
        max_variance,
        max_constant_mismatch: max_mismatch,
        constants,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpIdentityReport {
    pub pass: bool,
    pub max_deviation: f64,
    pub samples: usize,
}

/// `exp(u_1 Xhat_1 + ... + u_N Xhat_N)(0) = u` for a frame presented in its
/// own 1st-kind coordinates; deviation in the sup norm.
pub fn exp_identity_check(
    frame: &WeightedFrame,
    integ: &FlowIntegrator,
    seed: u64,
    count: usize,
) -> Result<ExpIdentityReport> {
    let mut rng = sampling::seeded_rng(seed);
    let origin = vec![0.0; frame.dim()];
    let mut max_dev: f64 = 0.0;
    for _ in 0..count {
        let u = sampling::random_in_box(&mut rng, frame.weights(), 0.5);
        let got = exp_map(frame, integ, &u, &origin)?;
        let dev = got
            .iter()
            .zip(&u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        max_dev = max_dev.max(dev);
    }
    Ok(ExpIdentityReport {
        pass: max_dev < 1e-8,
        max_deviation: max_dev,
        samples: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn e(s: &str, dim: usize) -> Expr {
        parse(s, dim).unwrap()
    }

    fn heisenberg() -> WeightedFrame {
        WeightedFrame::new(
            vec![
                vec![e("1", 3), e("0", 3), e("-x2/2", 3)],
                vec![e("0", 3), e("1", 3), e("x1/2", 3)],
                vec![e("0", 3), e("0", 3), e("1", 3)],
            ],
            Weights::integers(&[1, 1, 2]).unwrap(),
            vec![0.0; 3],
            1.0,
        )
        .unwrap()
    }

    fn sigma112() -> Weights {
        Weights::integers(&[1, 1, 2]).unwrap()
    }

    #[test]
    fn homogeneous_field_is_rescale_invariant() {
        let f = heisenberg();
        let sigma = sigma112();
        let grid = sampling::low_discrepancy_box(&sigma, 0.5, 10);
        for eps in [0.5, 0.25, 0.1] {
            let r = rescale_field(f.field(0), Ratio::from_integer(1), eps, &sigma).unwrap();
            for x in &grid {
                let got = r.eval(x).unwrap();
                let want = f.field(0).eval(x).unwrap();
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
        // weight-2 constant field is invariant at its own degree
        let r = rescale_field(f.field(2), Ratio::from_integer(2), 0.25, &sigma).unwrap();
        assert_eq!(r.eval(&[0.1, 0.2, 0.3]).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn inhomogeneous_term_drifts_linearly_in_eps() {
        // a_3 = -x2/2 + x1^2 on a weight-1 field: rescaled a_3 = -x2/2 + eps x1^2
        let sigma = sigma112();
        let field = VectorField::new(
            vec![e("1", 3), e("0", 3), e("-x2/2 + x1^2", 3)],
            Ratio::from_integer(1),
        );
        for eps in [0.5, 0.125] {
            let r = rescale_field(&field, Ratio::from_integer(1), eps, &sigma).unwrap();
            let x = [0.3, 0.4, 0.1];
            let got = r.eval(&x).unwrap();
            let want = -x[1] / 2.0 + eps * x[0] * x[0];
            assert!((got[2] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rescaling_above_degree_vanishes() {
        let f = heisenberg();
        let sigma = sigma112();
        let x = [0.3, -0.2, 0.1];
        let mut prev = f64::INFINITY;
        for eps in [0.5, 0.25, 0.125, 0.0625] {
            let r = rescale_field(f.field(0), Ratio::from_integer(2), eps, &sigma).unwrap();
            let norm: f64 = r.eval(&x).unwrap().iter().map(|v| v.abs()).sum();
            assert!(norm < prev);
            prev = norm;
        }
        assert!(prev < 0.1);
    }

    #[test]
    fn heisenberg_numeric_limits_are_the_fields() {
        let f = heisenberg();
        let grid = default_grid(f.weights(), 0.5);
        let out = nilpotentize_numeric(
            &f,
            &Schedule::limit_default(),
            &grid,
            &TolerancePolicy::default(),
        )
        .unwrap();
        assert_eq!(out.verdict, Verdict::Converged);
        let limits = out.limits.unwrap();
        for (k, field) in f.fields().iter().enumerate() {
            for (p, x) in grid.iter().enumerate() {
                let want = field.eval(x).unwrap();
                for (a, b) in limits[k][p].iter().zip(&want) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn planar_sin_frame_numeric_limit() {
        // X2 = (1 + sin(x1)) d2 with weight 2: limit is d2
        let f = WeightedFrame::new(
            vec![
                vec![e("1", 2), e("0", 2)],
                vec![e("0", 2), e("1 + sin(x1)", 2)],
            ],
            Weights::integers(&[1, 2]).unwrap(),
            vec![0.0; 2],
            1.0,
        )
        .unwrap();
        let grid = default_grid(f.weights(), 0.5);
        let out = nilpotentize_numeric(
            &f,
            &Schedule::limit_default(),
            &grid,
            &TolerancePolicy::default(),
        )
        .unwrap();
        assert_eq!(out.verdict, Verdict::Converged);
        let limits = out.limits.unwrap();
        for row in &limits[1] {
            assert!((row[1] - 1.0).abs() < 1e-6 && row[0].abs() < 1e-12);
        }
        // symbolic path agrees on the grid
        let sym = nilpotentize_symbolic(&f).unwrap();
        for (p, x) in grid.iter().enumerate() {
            let want = sym.field(1).eval(x).unwrap();
            for (a, b) in limits[1][p].iter().zip(&want) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn oscillating_pushforward_field_diverges() {
        // frame carrying d/dx pushed through (x, y + x^3 sin(1/x))
        let f = WeightedFrame::new(
            vec![
                vec![e("1", 2), e("3*x1^2*sin(1/x1) - x1*cos(1/x1)", 2)],
                vec![e("0", 2), e("1", 2)],
            ],
            Weights::integers(&[1, 2]).unwrap(),
            vec![0.0; 2],
            1.0,
        )
        .unwrap();
        let grid = default_grid(f.weights(), 0.5);
        let out = nilpotentize_numeric(
            &f,
            &Schedule::limit_default(),
            &grid,
            &TolerancePolicy::default(),
        )
        .unwrap();
        assert_eq!(out.verdict, Verdict::Diverged);
    }

    #[test]
    fn symbolic_nilpotentization_fixes_heisenberg() {
        let f = heisenberg();
        let nil = nilpotentize_symbolic(&f).unwrap();
        let grid = sampling::low_discrepancy_box(f.weights(), 0.5, 20);
        for (a, b) in f.fields().iter().zip(nil.fields()) {
            for x in &grid {
                assert_eq!(a.eval(x).unwrap(), b.eval(x).unwrap());
            }
        }
    }

    #[test]
    fn symbolic_nilpotentization_drops_heavy_and_light_terms() {
        let sigma = sigma112();
        // weight-1 field: -x2/2 survives (weight 1), x1^2 dropped (weight 2)
        let f = WeightedFrame::new(
            vec![
                vec![e("1", 3), e("0", 3), e("-x2/2 + x1^2", 3)],
                vec![e("0", 3), e("1", 3), e("x1/2", 3)],
                // constant on a slot that needs weight 1: dropped; x1 kept
                vec![e("0", 3), e("0", 3), e("1", 3)],
            ],
            sigma.clone(),
            vec![0.0; 3],
            1.0,
        )
        .unwrap();
        let nil = nilpotentize_symbolic(&f).unwrap();
        let x = [0.3, 0.5, -0.2];
        let got = nil.field(0).eval(&x).unwrap();
        assert!((got[2] + x[1] / 2.0).abs() < 1e-12, "{got:?}");

        let g = WeightedFrame::new(
            vec![
                vec![e("1", 3), e("0", 3), e("1 + x1", 3)],
                vec![e("0", 3), e("1", 3), e("0", 3)],
                vec![e("0", 3), e("0", 3), e("1", 3)],
            ],
            sigma,
            vec![0.0; 3],
            1.0,
        )
        .unwrap();
        let nil = nilpotentize_symbolic(&g).unwrap();
        let got = nil.field(0).eval(&x).unwrap();
        // constant term has weight 0 < 1 and is dropped, x1 survives
        assert!((got[2] - x[0]).abs() < 1e-12);
    }

    #[test]
    fn nilpotentized_output_is_homogeneous() {
        // perturbed fields in, homogeneous fields out: rescaling the output
        // at its own degree must be eps-independent
        let f = WeightedFrame::new(
            vec![
                vec![e("1", 3), e("0", 3), e("-x2/2 + x1*sin(x1)", 3)],
                vec![e("0", 3), e("1", 3), e("x1/2 + x1^2*x2", 3)],
                vec![e("0", 3), e("0", 3), e("1", 3)],
            ],
            sigma112(),
            vec![0.0; 3],
            1.0,
        )
        .unwrap();
        let nil = nilpotentize_symbolic(&f).unwrap();
        let sigma = nil.weights().clone();
        let grid = sampling::low_discrepancy_box(&sigma, 0.5, 10);
        for (k, field) in nil.fields().iter().enumerate() {
            for eps in [0.5, 0.25] {
                let r = rescale_field(field, sigma.get(k), eps, &sigma).unwrap();
                for x in &grid {
                    let got = r.eval(x).unwrap();
                    let want = field.eval(x).unwrap();
                    for (a, b) in got.iter().zip(&want) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn nonsmooth_coefficients_are_refused_symbolically() {
        let f = WeightedFrame::new(
            vec![
                vec![e("1", 2), e("x1^3*sin(1/x1)", 2)],
                vec![e("0", 2), e("1", 2)],
            ],
            Weights::integers(&[1, 2]).unwrap(),
            vec![0.0; 2],
            1.0,
        )
        .unwrap();
        assert!(matches!(
            nilpotentize_symbolic(&f),
            Err(Error::NonsmoothInput(_))
        ));
    }

    #[test]
    fn graded_structure_heisenberg_and_abelian() {
        let f = heisenberg();
        let nil = nilpotentize_symbolic(&f).unwrap();
        let rep = check_graded_structure(&nil, &f).unwrap();
        assert!(rep.pass, "{rep:?}");
        let c123 = rep
            .constants
            .iter()
            .find(|((i, j, k), _)| (*i, *j, *k) == (1, 2, 3))
            .unwrap()
            .1;
        assert!((c123 - 1.0).abs() < 1e-9);

        let flat = WeightedFrame::new(
            vec![
                vec![e("1", 2), e("0", 2)],
                vec![e("0", 2), e("1", 2)],
            ],
            Weights::integers(&[1, 2]).unwrap(),
            vec![0.0; 2],
            1.0,
        )
        .unwrap();
        let rep = check_graded_structure(&flat, &flat).unwrap();
        assert!(rep.pass);
        for (_, v) in rep.constants {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn exp_identity_pass_and_negative_control() {
        let integ = FlowIntegrator::default();
        let rep = exp_identity_check(&heisenberg(), &integ, 42, 100).unwrap();
        assert!(rep.pass, "max dev {}", rep.max_deviation);

        // swap the third coefficients of X1 and X2: still a frame, no longer
        // in canonical presentation
        let swapped = WeightedFrame::new(
            vec![
                vec![e("1", 3), e("0", 3), e("x1/2", 3)],
                vec![e("0", 3), e("1", 3), e("-x2/2", 3)],
                vec![e("0", 3), e("0", 3), e("1", 3)],
            ],
            sigma112(),
            vec![0.0; 3],
            1.0,
        )
        .unwrap();
        let rep = exp_identity_check(&swapped, &integ, 42, 100).unwrap();
        assert!(!rep.pass);
    }
}
