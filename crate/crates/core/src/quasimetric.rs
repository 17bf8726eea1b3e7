//! Box quasimetrics and scaling limits of distance functions.
//!
//! `d_inf(x, y)` is the quasinorm of the 1st-kind coordinates of `y`
//! centered at `x`. The cone engine probes `d(delta_eps x, delta_eps y)/eps`
//! along a schedule and classifies the tails; a converged run defines the
//! homogeneous approximation on the sampled pairs.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::charts::{theta1_inv, FlowIntegrator};
use crate::convergence::{classify, ConvergenceReport, Schedule, TolerancePolicy, Verdict};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::frames::WeightedFrame;
use crate::geometry::{dilate, quasinorm, Weights};

pub type MapFn = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync>;
type DistFn = Arc<dyn Fn(&[f64], &[f64]) -> Result<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    BoxQuasimetric,
    Explicit,
    PulledBack,
    Opaque,
}

/// A distance evaluator with a record of where it came from.
#[derive(Clone)]
pub struct DistanceFn {
    eval: DistFn,
    pub provenance: Provenance,
    pub dim: usize,
}

impl DistanceFn {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        (self.eval)(x, y)
    }

    /// The box quasimetric of a frame: quasinorm of `theta1_inv(x, y)`.
    pub fn box_quasimetric(frame: WeightedFrame, integ: FlowIntegrator) -> DistanceFn {
        let dim = frame.dim();
        let frame = Arc::new(frame);
        let eval: DistFn = Arc::new(move |x: &[f64], y: &[f64]| {
            let u = theta1_inv(&frame, &integ, x, y)?;
            Ok(quasinorm(&u, frame.weights()))
        });
        DistanceFn {
            eval,
            provenance: Provenance::BoxQuasimetric,
            dim,
        }
    }

    /// Distance given by one expression in `2 dim` variables: the first
    /// point binds `x1..xN`, the second `x{N+1}..x{2N}`.
    pub fn explicit(expr: Expr, dim: usize) -> Result<DistanceFn> {
        if expr.max_var() > 2 * dim {
            return Err(Error::BadInput(format!(
                "distance expression uses x{} but dimension is {dim}",
                expr.max_var()
            )));
        }
        let expr = Arc::new(expr);
        let eval: DistFn = Arc::new(move |x: &[f64], y: &[f64]| {
            let mut joint = Vec::with_capacity(x.len() + y.len());
            joint.extend_from_slice(x);
            joint.extend_from_slice(y);
            expr.eval(&joint)
        });
        Ok(DistanceFn {
            eval,
            provenance: Provenance::Explicit,
            dim,
        })
    }

    /// Pull `inner` back through a map: `rho(u, v) = inner(phi(u), phi(v))`.
    pub fn pulled_back(map: MapFn, inner: DistanceFn) -> DistanceFn {
        let dim = inner.dim;
        let eval: DistFn = Arc::new(move |u: &[f64], v: &[f64]| {
            let a = map(u)?;
            let b = map(v)?;
            inner.eval(&a, &b)
        });
        DistanceFn {
            eval,
            provenance: Provenance::PulledBack,
            dim,
        }
    }

    pub fn from_fn<F>(f: F, dim: usize) -> DistanceFn
    where
        F: Fn(&[f64], &[f64]) -> Result<f64> + Send + Sync + 'static,
    {
        DistanceFn {
            eval: Arc::new(f),
            provenance: Provenance::Opaque,
            dim,
        }
    }

    /// Spot-check the distance axioms on a few samples: nonnegativity and
    /// `d(x, x) = 0`. Cheap sanity screen for user-supplied evaluators.
    pub fn spot_check(&self, sigma: &Weights, samples: usize) -> Result<()> {
        let points = crate::sampling::low_discrepancy_box(sigma, 0.25, samples.max(2));
        for (i, x) in points.iter().enumerate() {
            let same = self.eval(x, x)?;
            if !(same.abs() < 1e-6) {
                return Err(Error::BadInput(format!(
                    "d(x, x) = {same:.3e} at {x:?}, not a distance"
                )));
            }
            let y = &points[(i + 1) % points.len()];
            let v = self.eval(x, y)?;
            if v < -1e-12 {
                return Err(Error::BadInput(format!(
                    "d(x, y) = {v:.3e} < 0 at {x:?}, {y:?}"
                )));
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for DistanceFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "DistanceFn({:?}, dim {})", self.provenance, self.dim)
    }
}

/// Box quasimetric value for a frame.
pub fn d_inf(
    frame: &WeightedFrame,
    integ: &FlowIntegrator,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    let u = theta1_inv(frame, integ, x, y)?;
    Ok(quasinorm(&u, frame.weights()))
}

/// Empirical lower bounds for the quasi-triangle constant `Q` and the
/// symmetry constant `C` over sample triples. True constants are `>= 1`,
/// so the maxima are clamped there.
pub fn estimate_quasimetric_constants(
    d: &DistanceFn,
    triples: &[(Vec<f64>, Vec<f64>, Vec<f64>)],
) -> Result<(f64, f64)> {
    let mut q: f64 = 1.0;
    let mut c: f64 = 1.0;
    let mut used = 0usize;
    for (x, y, z) in triples {
        let dxz = d.eval(x, z)?;
        let dxy = d.eval(x, y)?;
        let dyz = d.eval(y, z)?;
        let dyx = d.eval(y, x)?;
        if dxy + dyz < 1e-14 || dyx < 1e-14 {
            continue; // coincident points
        }
        q = q.max(dxz / (dxy + dyz));
        c = c.max(dxy / dyx);
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateSample(
            "all sample triples were coincident".to_string(),
        ));
    }
    Ok((q, c))
}

/// Two-sided comparison of `d(0, .)` with the quasinorm over samples:
/// `C1 = min d(0,x)/||x||`, `C2 = max`.
pub fn fit_distance_bounds(
    d: &DistanceFn,
    sigma: &Weights,
    samples: &[Vec<f64>],
) -> Result<(f64, f64)> {
    let origin = vec![0.0; sigma.dim()];
    let mut c1 = f64::INFINITY;
    let mut c2: f64 = 0.0;
    for x in samples {
        let norm = quasinorm(x, sigma);
        if norm < 1e-9 {
            continue;
        }
        let ratio = d.eval(&origin, x)? / norm;
        c1 = c1.min(ratio);
        c2 = c2.max(ratio);
    }
    if !c1.is_finite() || c2 == 0.0 {
        return Err(Error::DegenerateSample(
            "no usable samples for distance bounds".to_string(),
        ));
    }
    if c2 / c1 > 1e6 {
        return Err(Error::UnboundedRatio { spread: c2 / c1 });
    }
    Ok((c1, c2))
}

/// Converged limits per sample pair.
#[derive(Debug, Clone, Serialize)]
pub struct LimitTable {
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub values: Vec<f64>,
}

/// Outcome of a cone (homogeneous-approximation) run.
#[derive(Debug, Clone, Serialize)]
pub struct ConeReport {
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    pub report: ConvergenceReport,
    /// Defined on the samples when the run converged.
    pub limit_table: Option<LimitTable>,
    /// Max defect of `|lim(delta_t pair) - t lim(pair)|` over `t in {1/2, 1/4}`,
    /// relative to `t lim(pair)`; only present for converged runs.
    pub homogeneity_defect: Option<f64>,
}

fn raw_cone(
    d: &DistanceFn,
    sigma: &Weights,
    pairs: &[(Vec<f64>, Vec<f64>)],
    schedule: &Schedule,
    policy: &TolerancePolicy,
) -> ConvergenceReport {
    let epsilons = schedule.epsilons();
    let samples: Vec<_> = pairs
        .par_iter()
        .map(|(x, y)| {
            let values: Vec<Option<f64>> = epsilons
                .iter()
                .map(|&eps| {
                    let xs = dilate(x, eps, sigma).ok()?;
                    let ys = dilate(y, eps, sigma).ok()?;
                    d.eval(&xs, &ys).ok().map(|v| v / eps)
                })
                .collect();
            classify(&values, policy, schedule.ratio)
        })
        .collect();
    ConvergenceReport::aggregate(epsilons, samples)
}

/// Probe `d(delta_eps x, delta_eps y)/eps` on every pair; on uniform
/// convergence also sanity-check homogeneity of the estimated limit.
pub fn cone_limit(
    d: &DistanceFn,
    sigma: &Weights,
    pairs: &[(Vec<f64>, Vec<f64>)],
    schedule: &Schedule,
    policy: &TolerancePolicy,
) -> ConeReport {
    let report = raw_cone(d, sigma, pairs, schedule, policy);
    let mut limit_table = None;
    let mut homogeneity_defect = None;
    if report.verdict == Verdict::Converged {
        let values: Vec<f64> = report.samples.iter().map(|s| s.limit.unwrap()).collect();
        let mut defect: f64 = 0.0;
        for t in [0.5, 0.25] {
            let scaled: Vec<(Vec<f64>, Vec<f64>)> = pairs
                .iter()
                .map(|(x, y)| {
                    (
                        dilate(x, t, sigma).unwrap(),
                        dilate(y, t, sigma).unwrap(),
                    )
                })
                .collect();
            let sub = raw_cone(d, sigma, &scaled, schedule, policy);
            for (i, s) in sub.samples.iter().enumerate() {
                if let Some(lim) = s.limit {
                    let want = t * values[i];
                    let scale = want.abs().max(1e-12);
                    defect = defect.max((lim - want).abs() / scale);
                }
            }
        }
        homogeneity_defect = Some(defect);
        limit_table = Some(LimitTable {
            pairs: pairs.to_vec(),
            values,
        });
    }
    ConeReport {
        pairs: pairs.to_vec(),
        report,
        limit_table,
        homogeneity_defect,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IsometryReport {
    pub max_discrepancy: f64,
    pub pair_count: usize,
}

/// Compare two converged limit tables entry by entry; the caller aligns
/// them (entry `i` of `rho_hat` against entry `i` of `d_hat`, the latter
/// computed on the mapped pairs).
pub fn isometry_check(d_hat: &LimitTable, rho_hat: &LimitTable) -> Result<IsometryReport> {
    if d_hat.values.len() != rho_hat.values.len() {
        return Err(Error::MissingSample(format!(
            "tables have {} vs {} entries",
            d_hat.values.len(),
            rho_hat.values.len()
        )));
    }
    let max_discrepancy = d_hat
        .values
        .iter()
        .zip(&rho_hat.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(IsometryReport {
        max_discrepancy,
        pair_count: d_hat.values.len(),
    })
}

/// Run both cones and compare: `rho_hat(u, v)` against `d_hat(L u, L v)`.
pub fn isometry_via_cones(
    d: &DistanceFn,
    rho: &DistanceFn,
    l_map: &dyn Fn(&[f64]) -> Vec<f64>,
    sigma: &Weights,
    pairs: &[(Vec<f64>, Vec<f64>)],
    schedule: &Schedule,
    policy: &TolerancePolicy,
) -> Result<(IsometryReport, ConeReport, ConeReport)> {
    let rho_cone = cone_limit(rho, sigma, pairs, schedule, policy);
    let mapped: Vec<(Vec<f64>, Vec<f64>)> =
        pairs.iter().map(|(x, y)| (l_map(x), l_map(y))).collect();
    let d_cone = cone_limit(d, sigma, &mapped, schedule, policy);
    let (rho_table, d_table) = match (&rho_cone.limit_table, &d_cone.limit_table) {
        (Some(r), Some(d)) => (r, d),
        _ => {
            return Err(Error::Precondition(format!(
                "both cones must converge (rho: {}, d: {})",
                rho_cone.report.verdict, d_cone.report.verdict
            )))
        }
    };
    let report = isometry_check(d_table, rho_table)?;
    Ok((report, rho_cone, d_cone))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::sampling;

    fn heisenberg(radius: f64) -> WeightedFrame {
        let e = |s: &str| parse(s, 3).unwrap();
        WeightedFrame::new(
            vec![
                vec![e("1"), e("0"), e("-x2/2")],
                vec![e("0"), e("1"), e("x1/2")],
                vec![e("0"), e("0"), e("1")],
            ],
            Weights::integers(&[1, 1, 2]).unwrap(),
            vec![0.0; 3],
            radius,
        )
        .unwrap()
    }

    fn remark_metric() -> DistanceFn {
        // sqrt((x1-x2)^2 + |y1-y2|), homogeneous for weights (1,2)
        DistanceFn::explicit(
            parse("sqrt((x1-x3)^2 + abs(x2-x4))", 4).unwrap(),
            2,
        )
        .unwrap()
    }

    fn sigma12() -> Weights {
        Weights::integers(&[1, 2]).unwrap()
    }

    #[test]
    fn d_inf_oracles() {
        let f = heisenberg(3.0);
        let integ = FlowIntegrator::default();
        let x = [0.2, -0.1, 0.05];
        assert!(d_inf(&f, &integ, &x, &x).unwrap() < 1e-9);
        let v = d_inf(&f, &integ, &[0.0; 3], &[0.3, 0.0, 0.04]).unwrap();
        assert!((v - 0.3).abs() < 1e-8);
        // group-law oracle: u = (0, 1, -1/2), max(1, sqrt(1/2)) = 1
        let v = d_inf(&f, &integ, &[1.0, 0.0, 0.0], &[1.0, 1.0, 0.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-8);
    }

    #[test]
    fn euclidean_constants_are_one() {
        let d = DistanceFn::explicit(
            parse("sqrt((x1-x3)^2 + (x2-x4)^2)", 4).unwrap(),
            2,
        )
        .unwrap();
        let sigma = Weights::integers(&[1, 1]).unwrap();
        let mut rng = sampling::seeded_rng(42);
        let triples: Vec<_> = (0..300)
            .map(|_| {
                (
                    sampling::random_in_box(&mut rng, &sigma, 0.5),
                    sampling::random_in_box(&mut rng, &sigma, 0.5),
                    sampling::random_in_box(&mut rng, &sigma, 0.5),
                )
            })
            .collect();
        let (q, c) = estimate_quasimetric_constants(&d, &triples).unwrap();
        assert!((q - 1.0).abs() < 1e-12);
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn remark_metric_constants() {
        let d = remark_metric();
        let sigma = sigma12();
        let mut rng = sampling::seeded_rng(42);
        let triples: Vec<_> = (0..10_000)
            .map(|_| {
                (
                    sampling::random_in_box(&mut rng, &sigma, 1.0),
                    sampling::random_in_box(&mut rng, &sigma, 1.0),
                    sampling::random_in_box(&mut rng, &sigma, 1.0),
                )
            })
            .collect();
        let (q, c) = estimate_quasimetric_constants(&d, &triples).unwrap();
        assert!(q <= 2f64.sqrt() + 1e-9, "Q = {q}");
        assert!((c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn heisenberg_dinf_symmetry_constant() {
        let f = heisenberg(3.0);
        let d = DistanceFn::box_quasimetric(f, FlowIntegrator::default());
        let sigma = Weights::integers(&[1, 1, 2]).unwrap();
        let mut rng = sampling::seeded_rng(5);
        let triples: Vec<_> = (0..100)
            .map(|_| {
                (
                    sampling::random_in_box(&mut rng, &sigma, 0.4),
                    sampling::random_in_box(&mut rng, &sigma, 0.4),
                    sampling::random_in_box(&mut rng, &sigma, 0.4),
                )
            })
            .collect();
        let (_, c) = estimate_quasimetric_constants(&d, &triples).unwrap();
        // group inverse negates coordinates, so d_inf is symmetric
        assert!((c - 1.0).abs() < 1e-8, "C = {c}");
    }

    #[test]
    fn distance_bounds_examples() {
        let sigma = sigma12();
        // the quasinorm-difference distance has C1 = C2 = 1 from the origin
        let s2 = sigma.clone();
        let d = DistanceFn::from_fn(
            move |x: &[f64], y: &[f64]| {
                let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - a).collect();
                Ok(quasinorm(&diff, &s2))
            },
            2,
        );
        let samples = sampling::low_discrepancy_box(&sigma, 0.5, 64);
        let (c1, c2) = fit_distance_bounds(&d, &sigma, &samples).unwrap();
        assert!((c1 - 1.0).abs() < 1e-12 && (c2 - 1.0).abs() < 1e-12);

        let (c1, c2) = fit_distance_bounds(&remark_metric(), &sigma, &samples).unwrap();
        assert!(c1 >= 1.0 - 1e-12 && c2 <= 2f64.sqrt() + 1e-12, "{c1} {c2}");
        // bracket is stable as the box shrinks
        let small = sampling::low_discrepancy_box(&sigma, 0.25, 64);
        let (c1s, c2s) = fit_distance_bounds(&remark_metric(), &sigma, &small).unwrap();
        assert!((c2s / c1s) / (c2 / c1) < 1.1 && (c2s / c1s) / (c2 / c1) > 0.9);
    }

    #[test]
    fn unbounded_ratio_is_flagged() {
        let d = DistanceFn::from_fn(|x: &[f64], y: &[f64]| Ok((y[0] - x[0]).abs()), 2);
        let sigma = sigma12();
        let samples = vec![vec![1.0, 0.0], vec![1e-12, 0.25]];
        assert!(matches!(
            fit_distance_bounds(&d, &sigma, &samples),
            Err(Error::UnboundedRatio { .. })
        ));
    }

    #[test]
    fn homogeneous_metric_cone_is_constant() {
        let d = remark_metric();
        let sigma = sigma12();
        let pairs = sampling::low_discrepancy_pairs(&sigma, 0.5, 16);
        let cone = cone_limit(
            &d,
            &sigma,
            &pairs,
            &Schedule::cone_default(),
            &TolerancePolicy::default(),
        );
        assert_eq!(cone.report.verdict, Verdict::Converged);
        assert!(cone.homogeneity_defect.unwrap() < 1e-6);
        let table = cone.limit_table.unwrap();
        for (i, (x, y)) in table.pairs.iter().enumerate() {
            let direct = d.eval(x, y).unwrap();
            assert!((table.values[i] - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn oscillating_pullback_diverges() {
        // phi(x, y) = (x, y + x^2/2 sin(1/|x|^{3/4})), extended by 0 on x = 0
        let map: MapFn = Arc::new(|p: &[f64]| {
            let (x, y) = (p[0], p[1]);
            let f = if x == 0.0 {
                0.0
            } else {
                x * x / 2.0 * (1.0 / x.abs().powf(0.75)).sin()
            };
            Ok(vec![x, y + f])
        });
        let rho = DistanceFn::pulled_back(map, remark_metric());
        let sigma = sigma12();
        let pairs = vec![(vec![1.0, 0.0], vec![2.0, 0.0])];
        let cone = cone_limit(
            &rho,
            &sigma,
            &pairs,
            &Schedule::cone_default(),
            &TolerancePolicy::default(),
        );
        assert_eq!(cone.report.verdict, Verdict::Diverged);
        assert!(cone.report.samples[0].tail_amplitude >= 0.1);
    }

    #[test]
    fn pullback_under_homogeneous_map_converges() {
        // phi = (x, y + x^2/2) commutes with the dilations exactly
        let map: MapFn = Arc::new(|p: &[f64]| Ok(vec![p[0], p[1] + p[0] * p[0] / 2.0]));
        let rho = DistanceFn::pulled_back(map, remark_metric());
        let sigma = sigma12();
        let pairs = sampling::low_discrepancy_pairs(&sigma, 0.5, 16);
        let cone = cone_limit(
            &rho,
            &sigma,
            &pairs,
            &Schedule::cone_default(),
            &TolerancePolicy::default(),
        );
        assert_eq!(cone.report.verdict, Verdict::Converged);
    }

    #[test]
    fn isometry_identity_and_negative_control() {
        let d = remark_metric();
        let sigma = sigma12();
        let pairs = sampling::low_discrepancy_pairs(&sigma, 0.5, 12);
        let sched = Schedule::cone_default();
        let pol = TolerancePolicy::default();

        let ident = |x: &[f64]| x.to_vec();
        let (rep, _, _) =
            isometry_via_cones(&d, &d, &ident, &sigma, &pairs, &sched, &pol).unwrap();
        assert!(rep.max_discrepancy < 1e-9);

        // L = delta_2 against the unscaled cone: mismatch by a factor ~2
        let s = sigma.clone();
        let double = move |x: &[f64]| dilate(x, 2.0, &s).unwrap();
        let (rep, _, _) =
            isometry_via_cones(&d, &d, &double, &sigma, &pairs, &sched, &pol).unwrap();
        assert!(rep.max_discrepancy > 0.1);
    }
}
