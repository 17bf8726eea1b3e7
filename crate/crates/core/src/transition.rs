//! Coordinate-change diagnostics.
//!
//! For a map fixing the origin this module decides, by sampling along a
//! dilation schedule:
//!
//! * **box sandwich** — do `Box(C1 eps) ⊂ Phi(Box(eps)) ⊂ Box(C2 eps)`
//!   brackets persist as `eps -> 0`;
//! * **map limit** — does `delta_eps^{-1} ∘ Phi ∘ delta_eps` converge;
//! * **Jacobian limit** — do the weighted-rescaled first partials converge;
//! * **Taylor vanishing** — do all sub-weight derivatives at the origin
//!   vanish (symbolic maps only).
//!
//! On maps smooth to the depth the four answers must agree, and the
//! equivalence experiment hammers that on random polynomial ensembles.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::charts::{newton_invert, NewtonOptions};
use crate::convergence::{classify, ConvergenceReport, Schedule, TolerancePolicy, Verdict};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::frames::VectorField;
use crate::geometry::{
    dilate, eps_pow, multiindices_below, multiindices_with_weight, quasinorm, Weight, Weights,
};
use crate::linalg::{self, Matrix};
use crate::quasimetric::MapFn;
use crate::sampling;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OriginCheck {
    /// `Phi(0)` evaluated exactly and vanished.
    Exact,
    /// `Phi` is singular at 0 itself; the fixed origin was verified in the
    /// limit along tiny probes.
    Probed,
}

enum MapEval {
    Symbolic(Vec<Expr>),
    Opaque(MapFn),
}

impl MapEval {
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            MapEval::Symbolic(components) => components.iter().map(|c| c.eval(x)).collect(),
            MapEval::Opaque(f) => f(x),
        }
    }
}

/// A coordinate change `Phi: R^N -> R^N` with `Phi(0) = 0`, given by
/// expressions or an opaque evaluator, optionally with an inverse and with
/// symbolic first partials (auto-derived for symbolic maps).
pub struct TransitionMap {
    pub dim: usize,
    forward: MapEval,
    partials: Option<Vec<Vec<Expr>>>,
    inverse: Option<MapEval>,
    pub origin_check: OriginCheck,
}

impl TransitionMap {
    pub fn symbolic(components: Vec<Expr>, dim: usize) -> Result<Self> {
        if components.len() != dim {
            return Err(Error::BadInput(format!(
                "expected {dim} components, got {}",
                components.len()
            )));
        }
        let partials = components
            .iter()
            .map(|c| (1..=dim).map(|l| c.derive(l)).collect())
            .collect();
        let mut map = TransitionMap {
            dim,
            forward: MapEval::Symbolic(components),
            partials: Some(partials),
            inverse: None,
            origin_check: OriginCheck::Exact,
        };
        map.origin_check = map.verify_origin()?;
        Ok(map)
    }

    pub fn opaque(f: MapFn, dim: usize) -> Result<Self> {
        let mut map = TransitionMap {
            dim,
            forward: MapEval::Opaque(f),
            partials: None,
            inverse: None,
            origin_check: OriginCheck::Exact,
        };
        map.origin_check = map.verify_origin()?;
        Ok(map)
    }

    pub fn with_symbolic_inverse(mut self, components: Vec<Expr>) -> Self {
        self.inverse = Some(MapEval::Symbolic(components));
        self
    }

    pub fn with_opaque_inverse(mut self, f: MapFn) -> Self {
        self.inverse = Some(MapEval::Opaque(f));
        self
    }

    /// Supply hand-computed partials for an opaque map (the counterexample
    /// shears have closed-form derivatives away from their singular set).
    pub fn with_partials(mut self, partials: Vec<Vec<Expr>>) -> Self {
        self.partials = Some(partials);
        self
    }

    fn verify_origin(&self) -> Result<OriginCheck> {
        let zero = vec![0.0; self.dim];
        match self.eval(&zero) {
            Ok(v) => {
                if v.iter().any(|c| c.abs() > 1e-12) {
                    return Err(Error::BadInput(format!(
                        "map does not fix the origin: Phi(0) = {v:?}"
                    )));
                }
                Ok(OriginCheck::Exact)
            }
            Err(_) => {
                // singular expression exactly at 0; probe the limit
                let mut seq = sampling::RdSequence::new(self.dim);
                for _ in 0..4 {
                    let dir = seq.next_point();
                    let probe: Vec<f64> = dir.iter().map(|t| (2.0 * t - 1.0) * 1e-8).collect();
                    let v = self.eval(&probe)?;
                    if v.iter().any(|c| c.abs() > 1e-6) {
                        return Err(Error::BadInput(
                            "map does not fix the origin (probed)".to_string(),
                        ));
                    }
                }
                Ok(OriginCheck::Probed)
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward.eval(x)
    }

    pub fn has_inverse(&self) -> bool {
        self.inverse.is_some()
    }

    pub fn has_partials(&self) -> bool {
        self.partials.is_some()
    }

    pub fn partials(&self) -> Option<&Vec<Vec<Expr>>> {
        self.partials.as_ref()
    }

    pub fn eval_inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        match &self.inverse {
            Some(inv) => inv.eval(y),
            None => newton_invert(
                |x| self.eval(x),
                y,
                &vec![0.0; self.dim],
                &NewtonOptions::default(),
            ),
        }
    }

    /// Shareable forward evaluator (for metric pullbacks).
    pub fn forward_fn(self: &Arc<Self>) -> MapFn {
        let me = Arc::clone(self);
        Arc::new(move |x: &[f64]| me.eval(x))
    }
}

impl std::fmt::Debug for TransitionMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.forward {
            MapEval::Symbolic(_) => "symbolic",
            MapEval::Opaque(_) => "opaque",
        };
        write!(f, "TransitionMap({kind}, dim {})", self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HoldsVerdict {
    Holds,
    Fails,
    Inconclusive,
}

impl std::fmt::Display for HoldsVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            HoldsVerdict::Holds => "holds",
            HoldsVerdict::Fails => "fails",
            HoldsVerdict::Inconclusive => "inconclusive",
        };
        f.write_str(s)
    }
}

/// Box-sandwich outcome with the empirical bracket constants.
#[derive(Debug, Clone, Serialize)]
pub struct BoxSandwichVerdict {
    pub verdict: HoldsVerdict,
    /// Inner constant: `min ||Phi(x)||/eps` over the quasisphere, tail min.
    pub c1: f64,
    /// Outer constant: `max ||Phi(x)||/eps`, tail max.
    pub c2: f64,
    pub epsilons: Vec<f64>,
    pub c1_trace: Vec<Option<f64>>,
    pub c2_trace: Vec<Option<f64>>,
    pub note: String,
}

/// Sample the quasinorm sphere `||x|| = eps` and track the spread of
/// `||Phi(x)||/eps`. The inner inclusion via the minimum is justified for
/// origin-fixing homeomorphisms; the verdict is sampled, not certified.
pub fn check_box_sandwich(
    map: &TransitionMap,
    sigma: &Weights,
    schedule: &Schedule,
    directions: usize,
) -> BoxSandwichVerdict {
    let dirs = sampling::quasisphere_directions(sigma, directions);
    let epsilons = schedule.epsilons();
    let mut c1_trace = Vec::with_capacity(epsilons.len());
    let mut c2_trace = Vec::with_capacity(epsilons.len());
    for &eps in &epsilons {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        let mut ok = 0usize;
        for dir in &dirs {
            let x = dilate(dir, eps, sigma).unwrap();
            if let Ok(y) = map.eval(&x) {
                let r = quasinorm(&y, sigma) / eps;
                lo = lo.min(r);
                hi = hi.max(r);
                ok += 1;
            }
        }
        if ok * 2 < dirs.len() {
            c1_trace.push(None);
            c2_trace.push(None);
        } else {
            c1_trace.push(Some(lo));
            c2_trace.push(Some(hi));
        }
    }

    let window = 8usize.min(epsilons.len());
    let tail =
        |tr: &Vec<Option<f64>>| -> Option<Vec<f64>> { tr[tr.len() - window..].iter().copied().collect() };
    let (verdict, c1, c2, note) = match (tail(&c1_trace), tail(&c2_trace)) {
        (Some(t1), Some(t2)) => {
            let c1_min = t1.iter().cloned().fold(f64::INFINITY, f64::min);
            let c1_max = t1.iter().cloned().fold(0.0f64, f64::max);
            let c2_min = t2.iter().cloned().fold(f64::INFINITY, f64::min);
            let c2_max = t2.iter().cloned().fold(0.0f64, f64::max);
            let growing = t2[window - 1] > 2.0 * t2[0];
            let decaying = t1[window - 1] < 0.5 * t1[0];
            if growing || decaying || c1_min < 1e-9 {
                (HoldsVerdict::Fails, c1_min, c2_max, "bracket degenerates along the schedule".to_string())
            } else if c2_max / c2_min <= 2.0 && c1_max / c1_min <= 2.0 {
                (HoldsVerdict::Holds, c1_min, c2_max, String::new())
            } else {
                (HoldsVerdict::Inconclusive, c1_min, c2_max, "bracket unstable".to_string())
            }
        }
        _ => (
            HoldsVerdict::Inconclusive,
            f64::NAN,
            f64::NAN,
            "too many evaluation failures".to_string(),
        ),
    };

    let mut note = note;
    if !map.has_inverse() {
        if !note.is_empty() {
            note.push_str("; ");
        }
        note.push_str("sampled; assuming homeomorphism");
    }
    BoxSandwichVerdict {
        verdict,
        c1,
        c2,
        epsilons,
        c1_trace,
        c2_trace,
        note,
    }
}

/// `Phi_k(delta_eps x) / eps^{sigma_k}` for all components at once.
pub fn rescaled_map_at(
    map: &TransitionMap,
    sigma: &Weights,
    eps: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    let scaled = dilate(x, eps, sigma)?;
    let y = map.eval(&scaled)?;
    Ok(y
        .into_iter()
        .enumerate()
        .map(|(k, v)| v / eps_pow(eps, sigma.get(k)))
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct MapLimitReport {
    pub grid: Vec<Vec<f64>>,
    pub verdict: Verdict,
    /// Sample traces, grid-point-major then component.
    pub report: ConvergenceReport,
    /// `L` sampled on the grid when converged.
    pub limits: Option<Vec<Vec<f64>>>,
    /// Max relative defect of `L(delta_t x) = delta_t L(x)`, `t in {1/2, 1/4}`.
    pub homogeneity_defect: Option<f64>,
}

fn limit_sequences(
    map: &TransitionMap,
    sigma: &Weights,
    schedule: &Schedule,
    grid: &[Vec<f64>],
    policy: &TolerancePolicy,
) -> ConvergenceReport {
    let epsilons = schedule.epsilons();
    let n = sigma.dim();
    let samples: Vec<_> = grid
        .par_iter()
        .flat_map(|x| {
            let per_eps: Vec<Option<Vec<f64>>> = epsilons
                .iter()
                .map(|&eps| rescaled_map_at(map, sigma, eps, x).ok())
                .collect();
            (0..n)
                .map(|k| {
                    let values: Vec<Option<f64>> =
                        per_eps.iter().map(|v| v.as_ref().map(|v| v[k])).collect();
                    classify(&values, policy, schedule.ratio)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    ConvergenceReport::aggregate(epsilons, samples)
}

/// The scaling limit `L(x) = lim delta_eps^{-1} ∘ Phi ∘ delta_eps (x)`.
pub fn map_limit(
    map: &TransitionMap,
    sigma: &Weights,
    schedule: &Schedule,
    grid: &[Vec<f64>],
    policy: &TolerancePolicy,
) -> MapLimitReport {
    let n = sigma.dim();
    let report = limit_sequences(map, sigma, schedule, grid, policy);
    let mut limits = None;
    let mut homogeneity_defect = None;
    if report.verdict == Verdict::Converged {
        let l: Vec<Vec<f64>> = report
            .samples
            .chunks(n)
            .map(|row| row.iter().map(|s| s.limit.unwrap()).collect())
            .collect();
        let mut defect: f64 = 0.0;
        for t in [0.5, 0.25] {
            let scaled_grid: Vec<Vec<f64>> =
                grid.iter().map(|x| dilate(x, t, sigma).unwrap()).collect();
            let sub = limit_sequences(map, sigma, schedule, &scaled_grid, policy);
            if sub.verdict == Verdict::Converged {
                for (p, row) in sub.samples.chunks(n).enumerate() {
                    for (k, s) in row.iter().enumerate() {
                        let want = eps_pow(t, sigma.get(k)) * l[p][k];
                        defect = defect.max((s.limit.unwrap() - want).abs());
                    }
                }
            }
        }
        homogeneity_defect = Some(defect);
        limits = Some(l);
    }
    MapLimitReport {
        grid: grid.to_vec(),
        verdict: report.verdict,
        report,
        limits,
        homogeneity_defect,
    }
}

/// Evaluate the limit map at one point via the deepest schedule entry.
pub fn limit_map_eval(
    map: &TransitionMap,
    sigma: &Weights,
    schedule: &Schedule,
    x: &[f64],
) -> Result<Vec<f64>> {
    let eps = *schedule.epsilons().last().unwrap();
    rescaled_map_at(map, sigma, eps, x)
}

#[derive(Debug, Clone, Serialize)]
pub struct InverseLimitReport {
    pub verdict: Verdict,
    /// Sup mismatch between the rescaled-inverse limit and `L^{-1}`.
    pub max_mismatch: f64,
    pub pass: bool,
}

/// Check `lim delta_eps^{-1} ∘ Phi^{-1} ∘ delta_eps = L^{-1}` on a grid.
///
/// `L^{-1}` is computed by Newton inversion of the sampled limit map, so
/// this cross-checks two independent routes to the same object.
pub fn inverse_map_limit(
    map: &TransitionMap,
    sigma: &Weights,
    schedule: &Schedule,
    grid: &[Vec<f64>],
    policy: &TolerancePolicy,
) -> Result<InverseLimitReport> {
    if !map.has_inverse() {
        return Err(Error::Precondition(
            "inverse evaluator required".to_string(),
        ));
    }
    let forward = map_limit(map, sigma, schedule, grid, policy);
    if forward.verdict != Verdict::Converged {
        return Err(Error::Precondition(format!(
            "map limit must converge first (got {})",
            forward.verdict
        )));
    }

    // rescaled inverse sequences on the grid
    let epsilons = schedule.epsilons();
    let n = sigma.dim();
    let mut samples = Vec::new();
    for y in grid {
        let per_eps: Vec<Option<Vec<f64>>> = epsilons
            .iter()
            .map(|&eps| {
                let scaled = dilate(y, eps, sigma).ok()?;
                let x = map.eval_inverse(&scaled).ok()?;
                Some(
                    x.into_iter()
                        .enumerate()
                        .map(|(k, v)| v / eps_pow(eps, sigma.get(k)))
                        .collect::<Vec<f64>>(),
                )
            })
            .collect();
        for k in 0..n {
            let values: Vec<Option<f64>> =
                per_eps.iter().map(|v| v.as_ref().map(|v| v[k])).collect();
            samples.push(classify(&values, policy, schedule.ratio));
        }
    }
    let inverse_report = ConvergenceReport::aggregate(epsilons, samples);
    if inverse_report.verdict != Verdict::Converged {
        return Ok(InverseLimitReport {
            verdict: inverse_report.verdict,
            max_mismatch: f64::NAN,
            pass: false,
        });
    }

    // Newton-invert the limit evaluator at each grid point
    let newton = NewtonOptions {
        residual_tol: 1e-9,
        ..Default::default()
    };
    let mut max_mismatch: f64 = 0.0;
    for (p, y) in grid.iter().enumerate() {
        let l_inv_y = newton_invert(
            |x| limit_map_eval(map, sigma, schedule, x),
            y,
            y, // the limit map is a perturbation of the identity here
            &newton,
        )
        .map_err(|_| Error::NonInvertibleL { point: y.clone() })?;
        for k in 0..n {
            let got = inverse_report.samples[p * n + k].limit.unwrap();
            max_mismatch = max_mismatch.max((got - l_inv_y[k]).abs());
        }
    }
    Ok(InverseLimitReport {
        verdict: Verdict::Converged,
        max_mismatch,
        pass: max_mismatch < 1e-5,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct JacobianLimitReport {
    pub grid: Vec<Vec<f64>>,
    pub verdict: Verdict,
    /// Traces grid-point-major, then row-major over matrix entries.
    pub report: ConvergenceReport,
    /// `lambda` sampled on the grid when converged.
    pub lambda: Option<Vec<Matrix>>,
    /// `lambda(0)` assembled from the partials at the origin.
    pub lambda_at_origin: Option<Matrix>,
    pub det_lambda_origin: Option<f64>,
    /// Sup defect of `lambda = DL` by finite differences of the limit map,
    /// checked when the map limit also converges.
    pub dl_defect: Option<f64>,
}

/// The weighted Jacobian limit
/// `lambda(x) = lim D delta_eps^{-1} ∘ D Phi ∘ D delta_eps (x)`,
/// entrywise `eps^{sigma_l - sigma_k} d Phi_k / d x_l (delta_eps x)`.
pub fn jacobian_limit(
    map: &TransitionMap,
    sigma: &Weights,
    schedule: &Schedule,
    grid: &[Vec<f64>],
    policy: &TolerancePolicy,
) -> Result<JacobianLimitReport> {
    let partials = map
        .partials()
        .ok_or_else(|| Error::NonsmoothInput("map has no symbolic partials".to_string()))?;
    let n = sigma.dim();
    let epsilons = schedule.epsilons();

    let samples: Vec<_> = grid
        .par_iter()
        .flat_map(|x| {
            let mut rows = Vec::with_capacity(n * n);
            for k in 0..n {
                for l in 0..n {
                    let values: Vec<Option<f64>> = epsilons
                        .iter()
                        .map(|&eps| {
                            let scaled = dilate(x, eps, sigma).ok()?;
                            let v = partials[k][l].eval(&scaled).ok()?;
                            Some(eps_pow(eps, sigma.get(l) - sigma.get(k)) * v)
                        })
                        .collect();
                    rows.push(classify(&values, policy, schedule.ratio));
                }
            }
            rows
        })
        .collect();
    let report = ConvergenceReport::aggregate(epsilons, samples);

    // lambda(0): exact weight bookkeeping on the partials at the origin
    let lambda_at_origin = lambda_origin(partials, sigma);
    let det_lambda_origin = lambda_at_origin.as_ref().map(|m| linalg::det(m));

    let mut lambda = None;
    let mut dl_defect = None;
    if report.verdict == Verdict::Converged {
        let mats: Vec<Matrix> = report
            .samples
            .chunks(n * n)
            .map(|chunk| {
                (0..n)
                    .map(|k| (0..n).map(|l| chunk[k * n + l].limit.unwrap()).collect())
                    .collect()
            })
            .collect();

        // spot-check lambda = DL on a few grid points
        let probe = map_limit(map, sigma, schedule, &grid[..grid.len().min(4)], policy);
        if probe.verdict == Verdict::Converged {
            let h = 1e-4;
            let mut defect: f64 = 0.0;
            for (p, x) in grid.iter().take(4).enumerate() {
                for l in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[l] += h;
                    xm[l] -= h;
                    let (fp, fm) = (
                        limit_map_eval(map, sigma, schedule, &xp),
                        limit_map_eval(map, sigma, schedule, &xm),
                    );
                    if let (Ok(fp), Ok(fm)) = (fp, fm) {
                        for k in 0..n {
                            let fd = (fp[k] - fm[k]) / (2.0 * h);
                            defect = defect.max((mats[p][k][l] - fd).abs());
                        }
                    }
                }
            }
            dl_defect = Some(defect);
        }
        lambda = Some(mats);
    }

    Ok(JacobianLimitReport {
        grid: grid.to_vec(),
        verdict: report.verdict,
        report,
        lambda,
        lambda_at_origin,
        det_lambda_origin,
        dl_defect,
    })
}

fn lambda_origin(partials: &[Vec<Expr>], sigma: &Weights) -> Option<Matrix> {
    let n = sigma.dim();
    let zero = vec![0.0; n];
    let mut m = vec![vec![0.0; n]; n];
    for k in 0..n {
        for l in 0..n {
            let wk = sigma.get(k);
            let wl = sigma.get(l);
            if wl > wk {
                m[k][l] = 0.0;
                continue;
            }
            let v = partials[k][l].eval(&zero).ok()?;
            if wl == wk {
                m[k][l] = v;
            } else if v == 0.0 {
                m[k][l] = 0.0;
            } else {
                return None; // sub-weight entry with nonzero derivative: no limit
            }
        }
    }
    Some(m)
}

#[derive(Debug, Clone, Serialize)]
pub struct TaylorReport {
    pub pass: bool,
    /// `(component k, alpha, derivative value)` for sub-weight derivatives
    /// that fail to vanish; 1-based component index.
    pub offending: Vec<(usize, Vec<usize>, f64)>,
    /// The weighted Taylor polynomial of the limit map, emitted on pass.
    #[serde(skip)]
    pub limit_polynomial: Option<Vec<Expr>>,
}

/// Sub-weight derivative test at the origin: pass iff `D^alpha Phi_k(0) = 0`
/// for every `alpha` with `sigma(alpha) < sigma_k`.
pub fn taylor_vanishing_test(map: &TransitionMap, sigma: &Weights) -> Result<TaylorReport> {
    let components = match &map.forward {
        MapEval::Symbolic(c) => c,
        MapEval::Opaque(_) => {
            return Err(Error::NonsmoothInput(
                "Taylor test needs a symbolic map".to_string(),
            ))
        }
    };
    let n = sigma.dim();
    let mut offending = Vec::new();
    for k in 0..n {
        for alpha in multiindices_below(sigma, sigma.get(k)) {
            let v = components[k].partial_at_zero(alpha.entries())?;
            if v.abs() >= 1e-12 {
                offending.push((k + 1, alpha.entries().to_vec(), v));
            }
        }
    }
    let pass = offending.is_empty();
    let limit_polynomial = if pass {
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let mut poly = Expr::Const(0.0);
            for alpha in multiindices_with_weight(sigma, sigma.get(k)) {
                let v = components[k].partial_at_zero(alpha.entries())?;
                let coeff = v / alpha.factorial();
                if coeff != 0.0 {
                    poly = Expr::add(poly, Expr::monomial(coeff, alpha.entries()));
                }
            }
            out.push(poly);
        }
        Some(out)
    } else {
        None
    };
    Ok(TaylorReport {
        pass,
        offending,
        limit_polynomial,
    })
}

/// Boolean reading of each condition: `Some(true)` = the condition holds.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConditionFlags {
    pub c1_box: Option<bool>,
    pub c2_map: Option<bool>,
    pub c3_jacobian: Option<bool>,
    pub taylor: Option<bool>,
}

impl ConditionFlags {
    pub fn all_agree(&self) -> bool {
        match (self.c1_box, self.c2_map, self.c3_jacobian, self.taylor) {
            (Some(a), Some(b), Some(c), Some(d)) => a == b && b == c && c == d,
            _ => false,
        }
    }

    /// `C3 (with nondegenerate lambda(0)) => C2 => C1`.
    pub fn chain_violation(&self, det_ok: bool) -> Option<String> {
        if self.c3_jacobian == Some(true) && det_ok && self.c2_map == Some(false) {
            return Some("C3 converged but C2 did not".to_string());
        }
        if self.c2_map == Some(true) && self.c1_box == Some(false) {
            return Some("C2 converged but C1 fails".to_string());
        }
        None
    }
}

fn verdict_flag(v: Verdict) -> Option<bool> {
    match v {
        Verdict::Converged => Some(true),
        Verdict::Diverged => Some(false),
        Verdict::Inconclusive => None,
    }
}

fn holds_flag(v: HoldsVerdict) -> Option<bool> {
    match v {
        HoldsVerdict::Holds => Some(true),
        HoldsVerdict::Fails => Some(false),
        HoldsVerdict::Inconclusive => None,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub total: usize,
    pub agreements: usize,
    pub disagreements: Vec<(usize, String)>,
    pub chain_violations: Vec<(usize, String)>,
    pub pass: bool,
}

/// Generate a seeded ensemble of polynomial perturbations of the identity
/// (half clean, half with one planted sub-weight monomial) and verify that
/// the four condition verdicts agree on every member.
pub fn equivalence_experiment(
    sigma: &Weights,
    count: usize,
    seed: u64,
    schedule: &Schedule,
    policy: &TolerancePolicy,
) -> Result<EquivalenceReport> {
    let maps: Vec<(TransitionMap, bool)> = (0..count)
        .map(|i| {
            let planted = i % 2 == 1;
            let m = random_polynomial_map(sigma, seed.wrapping_add(i as u64), planted)?;
            Ok((m, planted))
        })
        .collect::<Result<_>>()?;

    let grid = sampling::low_discrepancy_box(sigma, 0.5, 16);
    let results: Vec<(ConditionFlags, bool)> = maps
        .par_iter()
        .map(|(map, _)| {
            let c1 = check_box_sandwich(map, sigma, schedule, 128);
            let c2 = map_limit(map, sigma, schedule, &grid, policy);
            let c3 = jacobian_limit(map, sigma, schedule, &grid, policy).unwrap();
            let taylor = taylor_vanishing_test(map, sigma).unwrap();
            let flags = ConditionFlags {
                c1_box: holds_flag(c1.verdict),
                c2_map: verdict_flag(c2.verdict),
                c3_jacobian: verdict_flag(c3.verdict),
                taylor: Some(taylor.pass),
            };
            let det_ok = c3.det_lambda_origin.map(|d| d.abs() > 1e-9).unwrap_or(false);
            (flags, det_ok)
        })
        .collect();

    let mut agreements = 0usize;
    let mut disagreements = Vec::new();
    let mut chain_violations = Vec::new();
    for (i, ((flags, det_ok), (_, planted))) in results.iter().zip(&maps).enumerate() {
        if flags.all_agree() {
            agreements += 1;
        } else {
            disagreements.push((
                i,
                format!(
                    "planted={planted} c1={:?} c2={:?} c3={:?} taylor={:?}",
                    flags.c1_box, flags.c2_map, flags.c3_jacobian, flags.taylor
                ),
            ));
        }
        if let Some(v) = flags.chain_violation(*det_ok) {
            chain_violations.push((i, v));
        }
    }
    let pass = disagreements.is_empty() && chain_violations.is_empty();
    Ok(EquivalenceReport {
        total: count,
        agreements,
        disagreements,
        chain_violations,
        pass,
    })
}

/// One random polynomial perturbation of the identity. Clean members only
/// carry monomials of weight `>= sigma_k` per component; planted members add
/// one sub-weight monomial with a coefficient bounded away from zero.
pub fn random_polynomial_map(
    sigma: &Weights,
    seed: u64,
    plant_subweight: bool,
) -> Result<TransitionMap> {
    use num_rational::Ratio;
    let n = sigma.dim();
    let mut rng = sampling::seeded_rng(seed);
    let bound = sigma.depth() + Ratio::from_integer(2);

    for _attempt in 0..32 {
        let mut components = Vec::with_capacity(n);
        for k in 0..n {
            let mut c = Expr::var(k + 1);
            for alpha in multiindices_below(sigma, bound) {
                if alpha.order() == 0 {
                    continue; // constants would unfix the origin
                }
                let w = alpha.weight(sigma);
                if w < sigma.get(k) {
                    continue;
                }
                let is_linear_self =
                    alpha.order() == 1 && alpha.entries()[k] == 1;
                if is_linear_self {
                    continue; // identity part already present
                }
                if rng.gen_range(0.0..1.0) < 0.35 {
                    let scale = if w == sigma.get(k) { 0.3 } else { 0.6 };
                    let coeff = rng.gen_range(-scale..scale);
                    c = Expr::add(c, Expr::monomial(coeff, alpha.entries()));
                }
            }
            components.push(c);
        }
        if plant_subweight {
            // pick a component with room below its weight
            let candidates: Vec<usize> = (0..n)
                .filter(|&k| {
                    multiindices_below(sigma, sigma.get(k))
                        .iter()
                        .any(|a| a.order() >= 1)
                })
                .collect();
            if candidates.is_empty() {
                return Err(Error::BadInput(
                    "weight system admits no sub-weight monomials".to_string(),
                ));
            }
            let k = candidates[rng.gen_range(0..candidates.len())];
            let subs: Vec<_> = multiindices_below(sigma, sigma.get(k))
                .into_iter()
                .filter(|a| a.order() >= 1)
                .collect();
            let alpha = &subs[rng.gen_range(0..subs.len())];
            let magnitude = rng.gen_range(0.25..1.0);
            let signum = if rng.gen_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
            components[k] = Expr::add(
                components[k].clone(),
                Expr::monomial(signum * magnitude, alpha.entries()),
            );
        }
        let map = TransitionMap::symbolic(components, n)?;
        // keep only maps that are diffeomorphic near 0: equal-weight linear
        // part must be nondegenerate
        if let Some(partials) = map.partials() {
            if let Some(m) = lambda_origin(partials, sigma) {
                if linalg::det(&m).abs() > 0.1 {
                    return Ok(map);
                }
            } else if plant_subweight {
                // planted linear sub-weight term: lambda(0) legitimately
                // fails to exist, keep the map
                return Ok(map);
            }
        }
    }
    Err(Error::BadInput(
        "could not draw a nondegenerate random map".to_string(),
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct PushforwardReport {
    pub verdict: Verdict,
    pub max_discrepancy: f64,
    pub pass: bool,
}

/// Compare the rescaled-pushforward limit of `X` under `Phi` against
/// `L_* Xhat (L^{-1}(y))` assembled from the sampled limits.
pub fn pushforward_limit_check(
    map: &TransitionMap,
    field: &VectorField,
    degree: Weight,
    sigma: &Weights,
    schedule: &Schedule,
    grid: &[Vec<f64>],
    policy: &TolerancePolicy,
) -> Result<PushforwardReport> {
    let jac = jacobian_limit(map, sigma, schedule, grid, policy)?;
    if jac.verdict != Verdict::Converged {
        return Err(Error::Precondition(format!(
            "Jacobian limit must converge (got {})",
            jac.verdict
        )));
    }
    match jac.det_lambda_origin {
        Some(d) if d.abs() > 1e-9 => {}
        _ => return Err(Error::SingularLambda),
    }
    let partials = map.partials().expect("jacobian_limit ensured partials");
    let n = sigma.dim();
    let epsilons = schedule.epsilons();
    let eps_min = *epsilons.last().unwrap();

    // Y = Phi_* X: Y(y) = DPhi(x) X(x), x = Phi^{-1}(y)
    let pushforward = |y: &[f64]| -> Result<Vec<f64>> {
        let x = map.eval_inverse(y)?;
        let vx = field.eval(&x)?;
        let mut out = vec![0.0; n];
        for k in 0..n {
            for l in 0..n {
                out[k] += partials[k][l].eval(&x)? * vx[l];
            }
        }
        Ok(out)
    };

    // numeric limit of the rescaled pushforward on the grid
    let mut samples = Vec::new();
    for y in grid {
        let per_eps: Vec<Option<Vec<f64>>> = epsilons
            .iter()
            .map(|&eps| {
                let scaled = dilate(y, eps, sigma).ok()?;
                let v = pushforward(&scaled).ok()?;
                Some(
                    v.into_iter()
                        .enumerate()
                        .map(|(j, c)| eps_pow(eps, degree - sigma.get(j)) * c)
                        .collect::<Vec<f64>>(),
                )
            })
            .collect();
        for j in 0..n {
            let values: Vec<Option<f64>> =
                per_eps.iter().map(|v| v.as_ref().map(|v| v[j])).collect();
            samples.push(classify(&values, policy, schedule.ratio));
        }
    }
    let report = ConvergenceReport::aggregate(epsilons.clone(), samples);
    if report.verdict != Verdict::Converged {
        return Ok(PushforwardReport {
            verdict: report.verdict,
            max_discrepancy: f64::NAN,
            pass: false,
        });
    }

    // reference: lambda(Xhat) composed with L^{-1}
    let newton = NewtonOptions {
        residual_tol: 1e-9,
        ..Default::default()
    };
    let rescaled_field_at = |x: &[f64]| -> Result<Vec<f64>> {
        let scaled = dilate(x, eps_min, sigma)?;
        let v = field.eval(&scaled)?;
        Ok(v
            .into_iter()
            .enumerate()
            .map(|(j, c)| eps_pow(eps_min, degree - sigma.get(j)) * c)
            .collect())
    };
    let rescaled_lambda_at = |x: &[f64]| -> Result<Matrix> {
        let scaled = dilate(x, eps_min, sigma)?;
        let mut m = vec![vec![0.0; n]; n];
        for k in 0..n {
            for l in 0..n {
                m[k][l] = eps_pow(eps_min, sigma.get(l) - sigma.get(k))
                    * partials[k][l].eval(&scaled)?;
            }
        }
        Ok(m)
    };

    let mut max_discrepancy: f64 = 0.0;
    for (p, y) in grid.iter().enumerate() {
        let x_hat = newton_invert(
            |x| limit_map_eval(map, sigma, schedule, x),
            y,
            y,
            &newton,
        )
        .map_err(|_| Error::NonInvertibleL { point: y.clone() })?;
        let xv = rescaled_field_at(&x_hat)?;
        let lam = rescaled_lambda_at(&x_hat)?;
        let reference = linalg::mat_vec(&lam, &xv);
        for j in 0..n {
            let got = report.samples[p * n + j].limit.unwrap();
            max_discrepancy = max_discrepancy.max((got - reference[j]).abs());
        }
    }
    Ok(PushforwardReport {
        verdict: Verdict::Converged,
        max_discrepancy,
        pass: max_discrepancy < 1e-6,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn sigma12() -> Weights {
        Weights::integers(&[1, 2]).unwrap()
    }

    fn map2(components: [&str; 2]) -> TransitionMap {
        let c = components
            .iter()
            .map(|s| parse(s, 2).unwrap())
            .collect();
        TransitionMap::symbolic(c, 2).unwrap()
    }

    fn grid2() -> Vec<Vec<f64>> {
        sampling::low_discrepancy_box(&sigma12(), 0.5, 16)
    }

    #[test]
    fn origin_fixing_is_enforced() {
        assert!(TransitionMap::symbolic(
            vec![parse("x1 + 1", 2).unwrap(), parse("x2", 2).unwrap()],
            2
        )
        .is_err());
        // removable singularity at the origin: accepted via probes
        let m = map2(["x1", "x2 + x1^3*sin(1/x1)"]);
        assert_eq!(m.origin_check, OriginCheck::Probed);
    }

    #[test]
    fn box_sandwich_identity() {
        let m = map2(["x1", "x2"]);
        let v = check_box_sandwich(&m, &sigma12(), &Schedule::cone_default(), 64);
        assert_eq!(v.verdict, HoldsVerdict::Holds);
        assert!((v.c1 - 1.0).abs() < 1e-12 && (v.c2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn box_sandwich_oscillating_shear_holds() {
        let m = map2(["x1", "x2 + x1^2/2*sin(1/abs(x1)^0.75)"]);
        let v = check_box_sandwich(&m, &sigma12(), &Schedule::cone_default(), 256);
        assert_eq!(v.verdict, HoldsVerdict::Holds, "{v:?}");
        // empirical bracket sits inside [1/sqrt(2) * 0.9, sqrt(2) * 1.1]
        assert!(v.c1 >= 0.9 / 2f64.sqrt(), "c1 = {}", v.c1);
        assert!(v.c2 <= 1.1 * 2f64.sqrt(), "c2 = {}", v.c2);
    }

    #[test]
    fn box_sandwich_subweight_shear_fails() {
        let m = map2(["x1", "x2 + x1"]);
        let v = check_box_sandwich(&m, &sigma12(), &Schedule::cone_default(), 64);
        assert_eq!(v.verdict, HoldsVerdict::Fails);
    }

    #[test]
    fn map_limit_of_flat_shear_converges_to_identity() {
        let m = map2(["x1", "x2 + x1^3*sin(1/x1)"]);
        let rep = map_limit(
            &m,
            &sigma12(),
            &Schedule::limit_default(),
            &grid2(),
            &TolerancePolicy::default(),
        );
        assert_eq!(rep.verdict, Verdict::Converged);
        let limits = rep.limits.unwrap();
        for (x, l) in grid2().iter().zip(&limits) {
            assert!((l[0] - x[0]).abs() < 1e-6);
            assert!((l[1] - x[1]).abs() < 1e-6);
        }
        assert!(rep.homogeneity_defect.unwrap() < 1e-6);
    }

    #[test]
    fn map_limit_of_homogeneous_shear_is_itself() {
        let m = map2(["x1", "x2 + x1^2/2"]);
        let rep = map_limit(
            &m,
            &sigma12(),
            &Schedule::limit_default(),
            &grid2(),
            &TolerancePolicy::default(),
        );
        assert_eq!(rep.verdict, Verdict::Converged);
        for (x, l) in grid2().iter().zip(&rep.limits.unwrap()) {
            assert!((l[0] - x[0]).abs() < 1e-9);
            assert!((l[1] - (x[1] + x[0] * x[0] / 2.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn map_limit_of_spiral_diverges() {
        let spiral: MapFn = Arc::new(|p: &[f64]| {
            let (x, y) = (p[0], p[1]);
            let r = (x * x + y * y).sqrt();
            if r == 0.0 {
                return Ok(vec![0.0, 0.0]);
            }
            let phase = y.atan2(x) + r.ln();
            Ok(vec![r * phase.cos(), r * phase.sin()])
        });
        let m = TransitionMap::opaque(spiral, 2).unwrap();
        let sigma = Weights::integers(&[1, 1]).unwrap();
        let grid = sampling::low_discrepancy_box(&sigma, 0.5, 16);
        let rep = map_limit(
            &m,
            &sigma,
            &Schedule::cone_default(),
            &grid,
            &TolerancePolicy::default(),
        );
        assert_eq!(rep.verdict, Verdict::Diverged);
    }

    #[test]
    fn inverse_limit_of_homogeneous_shear() {
        let m = map2(["x1", "x2 + x1^2/2"])
            .with_symbolic_inverse(vec![
                parse("x1", 2).unwrap(),
                parse("x2 - x1^2/2", 2).unwrap(),
            ]);
        let rep = inverse_map_limit(
            &m,
            &sigma12(),
            &Schedule::limit_default(),
            &grid2(),
            &TolerancePolicy::default(),
        )
        .unwrap();
        assert_eq!(rep.verdict, Verdict::Converged);
        assert!(rep.pass, "mismatch {}", rep.max_mismatch);
    }

    #[test]
    fn jacobian_limit_identity_and_shear() {
        let m = map2(["x1", "x2"]);
        let rep = jacobian_limit(
            &m,
            &sigma12(),
            &Schedule::limit_default(),
            &grid2(),
            &TolerancePolicy::default(),
        )
        .unwrap();
        assert_eq!(rep.verdict, Verdict::Converged);
        assert!((rep.det_lambda_origin.unwrap() - 1.0).abs() < 1e-12);

        let m = map2(["x1", "x2 + x1^2/2"]);
        let rep = jacobian_limit(
            &m,
            &sigma12(),
            &Schedule::limit_default(),
            &grid2(),
            &TolerancePolicy::default(),
        )
        .unwrap();
        assert_eq!(rep.verdict, Verdict::Converged);
        for (x, lam) in grid2().iter().zip(rep.lambda.as_ref().unwrap()) {
            assert!((lam[0][0] - 1.0).abs() < 1e-9);
            assert!(lam[0][1].abs() < 1e-12);
            assert!((lam[1][0] - x[0]).abs() < 1e-9);
            assert!((lam[1][1] - 1.0).abs() < 1e-9);
        }
        assert!(rep.dl_defect.unwrap() < 1e-4);
    }

    #[test]
    fn jacobian_limit_of_flat_shear_diverges_on_axis() {
        let m = map2(["x1", "x2 + x1^3*sin(1/x1)"]);
        let mut grid = grid2();
        grid.extend(sampling::axis_points(&sigma12(), 0.5, 0.8));
        let rep = jacobian_limit(
            &m,
            &sigma12(),
            &Schedule::limit_default(),
            &grid,
            &TolerancePolicy::default(),
        )
        .unwrap();
        assert_eq!(rep.verdict, Verdict::Diverged);
        // the (2,1) entry oscillates with amplitude ~ |x|
        let worst = rep.report.worst_sample.unwrap();
        assert!(rep.report.samples[worst].tail_amplitude >= 0.5);
    }

    #[test]
    fn taylor_test_examples() {
        let sigma = sigma12();
        let rep = taylor_vanishing_test(&map2(["x1", "x2 + x1"]), &sigma).unwrap();
        assert!(!rep.pass);
        assert_eq!(rep.offending.len(), 1);
        let (k, alpha, v) = &rep.offending[0];
        assert_eq!((*k, alpha.as_slice()), (2, &[1usize, 0][..]));
        assert!((v - 1.0).abs() < 1e-12);

        let rep = taylor_vanishing_test(&map2(["x1", "x2 + x1^2"]), &sigma).unwrap();
        assert!(rep.pass);
        let l = rep.limit_polynomial.unwrap();
        assert!((l[1].eval(&[0.3, 0.1]).unwrap() - (0.1 + 0.09)).abs() < 1e-12);

        // cubic term has weight 3 > 2: excluded from the limit polynomial
        let rep = taylor_vanishing_test(&map2(["x1", "x2 + x1^3"]), &sigma).unwrap();
        assert!(rep.pass);
        let l = rep.limit_polynomial.unwrap();
        assert!((l[1].eval(&[0.3, 0.1]).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn taylor_polynomial_matches_map_limit() {
        // mixed weights: the emitted polynomial keeps x1^2 and drops x1^3
        let m = map2(["x1", "x2 + x1^2 + x1^3"]);
        let sigma = sigma12();
        let taylor = taylor_vanishing_test(&m, &sigma).unwrap();
        assert!(taylor.pass);
        let poly = taylor.limit_polynomial.unwrap();
        let grid = grid2();
        let rep = map_limit(
            &m,
            &sigma,
            &Schedule::limit_default(),
            &grid,
            &TolerancePolicy::default(),
        );
        assert_eq!(rep.verdict, Verdict::Converged);
        for (x, l) in grid.iter().zip(&rep.limits.unwrap()) {
            for (k, p) in poly.iter().enumerate() {
                let want = p.eval(x).unwrap();
                assert!((l[k] - want).abs() < 1e-6, "{l:?} vs poly at {x:?}");
            }
        }
    }

    #[test]
    fn equivalence_experiment_small() {
        let rep = equivalence_experiment(
            &sigma12(),
            10,
            42,
            &Schedule::limit_default(),
            &TolerancePolicy::default(),
        )
        .unwrap();
        assert!(rep.pass, "{:?}", rep.disagreements);
        assert_eq!(rep.agreements, 10);
    }

    #[test]
    fn pushforward_identity_and_shear() {
        // identity: the pushforward limit is the field's own limit
        let sigma = Weights::integers(&[1, 1, 2]).unwrap();
        let e3 = |s: &str| parse(s, 3).unwrap();
        let x1 = VectorField::new(
            vec![e3("1"), e3("0"), e3("-x2/2")],
            num_rational::Ratio::from_integer(1),
        );
        let ident = TransitionMap::symbolic(vec![e3("x1"), e3("x2"), e3("x3")], 3).unwrap();
        let grid = sampling::low_discrepancy_box(&sigma, 0.4, 8);
        let rep = pushforward_limit_check(
            &ident,
            &x1,
            num_rational::Ratio::from_integer(1),
            &sigma,
            &Schedule::limit_default(),
            &grid,
            &TolerancePolicy::default(),
        )
        .unwrap();
        assert!(rep.pass, "discrepancy {}", rep.max_discrepancy);

        // homogeneous shear with closed-form inverse
        let shear = TransitionMap::symbolic(
            vec![e3("x1"), e3("x2"), e3("x3 + x1*x2/2")],
            3,
        )
        .unwrap()
        .with_symbolic_inverse(vec![e3("x1"), e3("x2"), e3("x3 - x1*x2/2")]);
        let rep = pushforward_limit_check(
            &shear,
            &x1,
            num_rational::Ratio::from_integer(1),
            &sigma,
            &Schedule::limit_default(),
            &grid,
            &TolerancePolicy::default(),
        )
        .unwrap();
        assert!(rep.pass, "discrepancy {}", rep.max_discrepancy);
    }

    #[test]
    fn pushforward_refuses_diverging_jacobian() {
        let m = map2(["x1", "x2 + x1^3*sin(1/x1)"]);
        let field = VectorField::new(
            vec![parse("1", 2).unwrap(), parse("0", 2).unwrap()],
            num_rational::Ratio::from_integer(1),
        );
        let mut grid = grid2();
        grid.extend(sampling::axis_points(&sigma12(), 0.5, 0.8));
        let err = pushforward_limit_check(
            &m,
            &field,
            num_rational::Ratio::from_integer(1),
            &sigma12(),
            &Schedule::limit_default(),
            &grid,
            &TolerancePolicy::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)), "{err}");
    }
}
