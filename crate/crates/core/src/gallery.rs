//! Built-in frames, maps and metrics with declared ground truth.
//!
//! Every entry packages the objects plus the verdicts they are known to
//! produce (closed-form group laws, hand-derived commutator tables,
//! oscillating shears with no scaling limit, the logarithmic spiral).
//! `run` executes each declared truth and reports pass/fail; entries are
//! data, so adding one requires no engine change.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::charts::FlowIntegrator;
use crate::convergence::{Schedule, TolerancePolicy, Verdict};
use crate::error::{Error, Result};
use crate::expr::parse;
use crate::experiments::{curve_divergence, default_controls};
use crate::frames::{verify_commutator_table, WeightedFrame};
use crate::geometry::{dilate, quasinorm, Weights};
use crate::io::{FrameSpec, MapSpec};
use crate::nilpotent::{check_graded_structure, exp_identity_check, nilpotentize_symbolic};
use crate::quasimetric::{cone_limit, d_inf, DistanceFn, MapFn};
use crate::sampling;
use crate::transition::{check_box_sandwich, jacobian_limit, map_limit, HoldsVerdict, TransitionMap};

/// A declared, checkable fact about an entry.
#[derive(Debug, Clone)]
pub enum Truth {
    /// `exp(sum u_i Xhat_i)(0) = u` for the nilpotentized frame.
    ExpIdentity,
    /// The frame is its own symbolic nilpotentization.
    SelfNilpotent,
    /// `c_ijk` at the base point (1-based indices).
    CommutatorConstant { i: usize, j: usize, k: usize, value: f64 },
    /// Graded commutator structure of the nilpotentization checks out.
    GradedStructure,
    /// `d_inf` matches the entry's closed-form distance oracle.
    DInfGroupLaw,
    /// Box sandwich holds with the bracket inside `[c1_min, c2_max]`.
    BoxSandwichHolds { c1_min: f64, c2_max: f64 },
    /// Cone verdict on explicit pairs (or the default pair set when empty).
    ConeVerdict {
        pairs: Vec<(Vec<f64>, Vec<f64>)>,
        expected: Verdict,
        min_amplitude: Option<f64>,
        schedule: Option<Schedule>,
    },
    /// Map-limit verdict; optionally the limit must be the identity.
    MapLimitIs { expected: Verdict, identity_limit: bool },
    /// Jacobian-limit verdict on a grid including axis points.
    JacobianLimitIs { expected: Verdict, min_amplitude: Option<f64> },
    /// The entry's metric is exactly homogeneous under the dilations.
    MetricHomogeneity { tol: f64 },
    /// Curve-divergence slope against the nilpotentized frame.
    CurveDivergenceSlope { min_slope: f64 },
}

type DistOracle = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

pub struct GalleryEntry {
    pub name: String,
    pub description: String,
    pub weights: Weights,
    pub frame: Option<WeightedFrame>,
    pub map: Option<Arc<TransitionMap>>,
    /// Symbolic form of the map when one exists (for export).
    pub map_spec: Option<MapSpec>,
    pub metric: Option<DistanceFn>,
    pub truths: Vec<Truth>,
    /// Prose facts recorded but not machine-checked.
    pub notes: Vec<String>,
    pub distance_oracle: Option<DistOracle>,
}

#[derive(Debug, Clone)]
pub struct GalleryConfig {
    pub cone_schedule: Schedule,
    pub limit_schedule: Schedule,
    pub policy: TolerancePolicy,
    pub integrator: FlowIntegrator,
    pub seed: u64,
}

impl Default for GalleryConfig {
    fn default() -> Self {
        GalleryConfig {
            cone_schedule: Schedule::cone_default(),
            limit_schedule: Schedule::limit_default(),
            policy: TolerancePolicy::default(),
            integrator: FlowIntegrator::default(),
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TruthResult {
    pub label: String,
    pub pass: bool,
    pub details: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EntryReport {
    pub name: String,
    pub pass: bool,
    pub results: Vec<TruthResult>,
    pub notes: Vec<String>,
}

const NAMES: [&str; 7] = [
    "heisenberg",
    "heisenberg_perturbed",
    "engel",
    "sin1_beta",
    "sin1_c11",
    "sin2",
    "spiral",
];

pub fn list() -> Vec<&'static str> {
    NAMES.to_vec()
}

pub fn get(name: &str) -> Result<GalleryEntry> {
    match name {
        "heisenberg" => Ok(heisenberg_entry()),
        "heisenberg_perturbed" => Ok(heisenberg_perturbed_entry()),
        "engel" => Ok(engel_entry()),
        "sin1_beta" => Ok(sin1_beta_entry()),
        "sin1_c11" => Ok(sin1_c11_entry()),
        "sin2" => Ok(sin2_entry()),
        "spiral" => Ok(spiral_entry()),
        _ => Err(Error::UnknownEntry(name.to_string())),
    }
}

// ---------------------------------------------------------------- frames

/// Step-2 frame on R^3: X1 = d1 - x2/2 d3, X2 = d2 + x1/2 d3, X3 = d3.
pub fn heisenberg_frame() -> WeightedFrame {
    let e = |s: &str| parse(s, 3).unwrap();
    WeightedFrame::new(
        vec![
            vec![e("1"), e("0"), e("-x2/2")],
            vec![e("0"), e("1"), e("x1/2")],
            vec![e("0"), e("0"), e("1")],
        ],
        Weights::integers(&[1, 1, 2]).unwrap(),
        vec![0.0; 3],
        1.0,
    )
    .unwrap()
}

/// Heisenberg frame with higher-weight coefficient perturbations; its
/// nilpotentization is the clean Heisenberg frame.
pub fn heisenberg_perturbed_frame() -> WeightedFrame {
    let e = |s: &str| parse(s, 3).unwrap();
    WeightedFrame::new(
        vec![
            vec![e("1"), e("0"), e("-x2/2 + x1*sin(x1)")],
            vec![e("0"), e("1"), e("x1/2 + x1^2*x2")],
            vec![e("0"), e("0"), e("1")],
        ],
        Weights::integers(&[1, 1, 2]).unwrap(),
        vec![0.0; 3],
        1.0,
    )
    .unwrap()
}

/// Step-3 frame on R^4 with table [X1,X2] = X3, [X1,X3] = X4.
pub fn engel_frame() -> WeightedFrame {
    let e = |s: &str| parse(s, 4).unwrap();
    WeightedFrame::new(
        vec![
            vec![e("1"), e("0"), e("0"), e("0")],
            vec![e("0"), e("1"), e("x1"), e("x1^2/2")],
            vec![e("0"), e("0"), e("1"), e("x1")],
            vec![e("0"), e("0"), e("0"), e("1")],
        ],
        Weights::integers(&[1, 1, 2, 3]).unwrap(),
        vec![0.0; 4],
        1.0,
    )
    .unwrap()
}

/// Group product `x * u` in 1st-kind coordinates of the Heisenberg frame.
pub fn heisenberg_multiply(x: &[f64], u: &[f64]) -> Vec<f64> {
    vec![
        x[0] + u[0],
        x[1] + u[1],
        x[2] + u[2] + 0.5 * (x[0] * u[1] - x[1] * u[0]),
    ]
}

/// Closed-form `d_inf` on the Heisenberg frame via the group law.
pub fn heisenberg_d_inf_oracle(x: &[f64], y: &[f64]) -> f64 {
    let u = vec![
        y[0] - x[0],
        y[1] - x[1],
        y[2] - x[2] - 0.5 * (x[0] * y[1] - x[1] * y[0]),
    ];
    quasinorm(&u, &Weights::integers(&[1, 1, 2]).unwrap())
}

/// Hand-integrated 2nd-kind chart of the Heisenberg frame:
/// `exp(u3 X3) ∘ exp(u2 X2) ∘ exp(u1 X1)(0)`.
pub fn heisenberg_second_kind(u: &[f64]) -> Vec<f64> {
    vec![u[0], u[1], u[2] + 0.5 * u[0] * u[1]]
}

/// Hand-integrated 2nd-kind chart of the Engel frame.
pub fn engel_second_kind(u: &[f64]) -> Vec<f64> {
    vec![
        u[0],
        u[1],
        u[2] + u[0] * u[1],
        u[3] + 0.5 * u[0] * u[0] * u[1] + u[0] * u[2],
    ]
}

// ---------------------------------------------------------------- metrics

fn remark_base_metric() -> DistanceFn {
    DistanceFn::explicit(parse("sqrt((x1-x3)^2 + abs(x2-x4))", 4).unwrap(), 2).unwrap()
}

fn euclidean_metric() -> DistanceFn {
    DistanceFn::explicit(parse("sqrt((x1-x3)^2 + (x2-x4)^2)", 4).unwrap(), 2).unwrap()
}

/// `int_0^x t sin(1/t) dt` by adaptive Simpson quadrature (absolute
/// tolerance 1e-12, integrand extended by 0 at t = 0).
pub fn integral_t_sin_inv(x: f64) -> f64 {
    fn integrand(t: f64) -> f64 {
        if t == 0.0 {
            0.0
        } else {
            t * (1.0 / t).sin()
        }
    }
    fn simpson(a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (integrand(a) + 4.0 * integrand(0.5 * (a + b)) + integrand(b))
    }
    fn recurse(a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> f64 {
        let m = 0.5 * (a + b);
        let left = simpson(a, m);
        let right = simpson(m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(a, m, left, 0.5 * tol, depth - 1) + recurse(m, b, right, 0.5 * tol, depth - 1)
    }
    if x == 0.0 {
        return 0.0;
    }
    let hi = x.abs();
    let v = recurse(0.0, hi, simpson(0.0, hi), 1e-12, 48);
    if x > 0.0 {
        v
    } else {
        -v
    }
}

// ---------------------------------------------------------------- entries

fn heisenberg_entry() -> GalleryEntry {
    let frame = heisenberg_frame();
    GalleryEntry {
        name: "heisenberg".to_string(),
        description: "step-2 frame with closed-form group law".to_string(),
        weights: frame.weights().clone(),
        frame: Some(frame),
        map: None,
        map_spec: None,
        metric: None,
        truths: vec![
            Truth::ExpIdentity,
            Truth::SelfNilpotent,
            Truth::CommutatorConstant { i: 1, j: 2, k: 3, value: 1.0 },
            Truth::DInfGroupLaw,
        ],
        notes: vec![],
        distance_oracle: Some(Arc::new(|x, y| heisenberg_d_inf_oracle(x, y))),
    }
}

fn heisenberg_perturbed_entry() -> GalleryEntry {
    let frame = heisenberg_perturbed_frame();
    GalleryEntry {
        name: "heisenberg_perturbed".to_string(),
        description: "Heisenberg fields plus higher-weight perturbations".to_string(),
        weights: frame.weights().clone(),
        frame: Some(frame),
        map: None,
        map_spec: None,
        metric: None,
        truths: vec![
            Truth::CommutatorConstant { i: 1, j: 2, k: 3, value: 1.0 },
            Truth::GradedStructure,
            Truth::CurveDivergenceSlope { min_slope: 1.05 },
        ],
        notes: vec![],
        distance_oracle: None,
    }
}

fn engel_entry() -> GalleryEntry {
    let frame = engel_frame();
    GalleryEntry {
        name: "engel".to_string(),
        description: "step-3 frame with table [X1,X2]=X3, [X1,X3]=X4".to_string(),
        weights: frame.weights().clone(),
        frame: Some(frame),
        map: None,
        map_spec: None,
        metric: None,
        truths: vec![
            Truth::CommutatorConstant { i: 1, j: 2, k: 3, value: 1.0 },
            Truth::CommutatorConstant { i: 1, j: 3, k: 4, value: 1.0 },
            Truth::CommutatorConstant { i: 2, j: 3, k: 4, value: 0.0 },
            Truth::SelfNilpotent,
            Truth::GradedStructure,
        ],
        notes: vec![],
        distance_oracle: None,
    }
}

fn sin1_beta_entry() -> GalleryEntry {
    let spec = MapSpec {
        dim: 2,
        weights: vec![1.0, 2.0],
        components: vec![
            "x1".to_string(),
            "x2 + x1^2/2*sin(1/abs(x1)^0.75)".to_string(),
        ],
        inverse: Some(vec![
            "x1".to_string(),
            "x2 - x1^2/2*sin(1/abs(x1)^0.75)".to_string(),
        ]),
    };
    let (map, weights) = spec.build().unwrap();
    let map = Arc::new(map);
    let metric = DistanceFn::pulled_back(map.forward_fn(), remark_base_metric());
    GalleryEntry {
        name: "sin1_beta".to_string(),
        description: "oscillating shear of the parabolic metric, beta = 1/4".to_string(),
        weights,
        frame: None,
        map: Some(map),
        map_spec: Some(spec),
        metric: Some(metric),
        truths: vec![
            Truth::BoxSandwichHolds {
                c1_min: 0.9 / std::f64::consts::SQRT_2,
                c2_max: 1.1 * std::f64::consts::SQRT_2,
            },
            Truth::ConeVerdict {
                pairs: vec![(vec![1.0, 0.0], vec![2.0, 0.0])],
                expected: Verdict::Diverged,
                min_amplitude: Some(0.1),
                schedule: None,
            },
        ],
        notes: vec![
            "the box bracket holds yet the rescaled pulled-back metric has no limit".to_string(),
        ],
        distance_oracle: None,
    }
}

fn sin1_c11_entry() -> GalleryEntry {
    let forward: MapFn = Arc::new(|p: &[f64]| {
        Ok(vec![p[0], p[1] + integral_t_sin_inv(p[0])])
    });
    let map = Arc::new(TransitionMap::opaque(forward, 2).unwrap());
    let inverse: MapFn = Arc::new(|p: &[f64]| {
        Ok(vec![p[0], p[1] - integral_t_sin_inv(p[0])])
    });
    let map = Arc::new(
        Arc::try_unwrap(map)
            .unwrap_or_else(|_| unreachable!())
            .with_opaque_inverse(inverse),
    );
    let metric = DistanceFn::pulled_back(map.forward_fn(), remark_base_metric());
    GalleryEntry {
        name: "sin1_c11".to_string(),
        description: "shear by the quadrature integral of t sin(1/t)".to_string(),
        weights: Weights::integers(&[1, 2]).unwrap(),
        frame: None,
        map: Some(map),
        map_spec: None,
        metric: Some(metric),
        truths: vec![Truth::ConeVerdict {
            pairs: vec![(vec![1.0, 0.0], vec![2.0, 0.0])],
            expected: Verdict::Diverged,
            min_amplitude: None,
            schedule: None,
        }],
        notes: vec![
            "below eps ~ 2^-14 the rescaled differences sit at the quadrature noise floor"
                .to_string(),
        ],
        distance_oracle: None,
    }
}

fn sin2_entry() -> GalleryEntry {
    let spec = MapSpec {
        dim: 2,
        weights: vec![1.0, 2.0],
        components: vec!["x1".to_string(), "x2 + x1^3*sin(1/x1)".to_string()],
        inverse: Some(vec![
            "x1".to_string(),
            "x2 - x1^3*sin(1/x1)".to_string(),
        ]),
    };
    let (map, weights) = spec.build().unwrap();
    GalleryEntry {
        name: "sin2".to_string(),
        description: "flat shear whose map limit exists but Jacobian limit does not".to_string(),
        weights,
        frame: None,
        map: Some(Arc::new(map)),
        map_spec: Some(spec),
        metric: None,
        truths: vec![
            Truth::MapLimitIs {
                expected: Verdict::Converged,
                identity_limit: true,
            },
            Truth::JacobianLimitIs {
                expected: Verdict::Diverged,
                min_amplitude: Some(0.5),
            },
        ],
        notes: vec![],
        distance_oracle: None,
    }
}

fn spiral_entry() -> GalleryEntry {
    let forward: MapFn = Arc::new(|p: &[f64]| {
        let (x, y) = (p[0], p[1]);
        let r = (x * x + y * y).sqrt();
        if r == 0.0 {
            return Ok(vec![0.0, 0.0]);
        }
        let phase = y.atan2(x) + r.ln();
        Ok(vec![r * phase.cos(), r * phase.sin()])
    });
    let inverse: MapFn = Arc::new(|p: &[f64]| {
        let (x, y) = (p[0], p[1]);
        let r = (x * x + y * y).sqrt();
        if r == 0.0 {
            return Ok(vec![0.0, 0.0]);
        }
        let phase = y.atan2(x) - r.ln();
        Ok(vec![r * phase.cos(), r * phase.sin()])
    });
    let map = Arc::new(
        TransitionMap::opaque(forward, 2)
            .unwrap()
            .with_opaque_inverse(inverse),
    );
    let metric = DistanceFn::pulled_back(map.forward_fn(), euclidean_metric());
    GalleryEntry {
        name: "spiral".to_string(),
        description: "logarithmic spiral: homogeneous pulled-back metric, no map limit"
            .to_string(),
        weights: Weights::integers(&[1, 1]).unwrap(),
        frame: None,
        map: Some(map),
        map_spec: None,
        metric: Some(metric),
        truths: vec![
            Truth::MetricHomogeneity { tol: 1e-10 },
            Truth::MapLimitIs {
                expected: Verdict::Diverged,
                identity_limit: false,
            },
        ],
        notes: vec![
            "the flat metric and its spiral pullback are not isometric; prose fact, no finite certificate is checked".to_string(),
        ],
        distance_oracle: None,
    }
}

// ---------------------------------------------------------------- runner

fn result(label: &str, pass: bool, details: String) -> TruthResult {
    TruthResult {
        label: label.to_string(),
        pass,
        details,
    }
}

fn run_truth(entry: &GalleryEntry, truth: &Truth, config: &GalleryConfig) -> TruthResult {
    match truth {
        Truth::ExpIdentity => {
            let frame = entry.frame.as_ref().expect("frame entry");
            match nilpotentize_symbolic(frame)
                .and_then(|nil| exp_identity_check(&nil, &config.integrator, config.seed, 100))
            {
                Ok(rep) => result(
                    "exp_identity",
                    rep.pass,
                    format!("max deviation {:.3e}", rep.max_deviation),
                ),
                Err(e) => result("exp_identity", false, e.to_string()),
            }
        }
        Truth::SelfNilpotent => {
            let frame = entry.frame.as_ref().expect("frame entry");
            match nilpotentize_symbolic(frame) {
                Ok(nil) => {
                    let grid = sampling::low_discrepancy_box(frame.weights(), 0.5, 20);
                    let mut worst: f64 = 0.0;
                    for x in &grid {
                        for (a, b) in frame.fields().iter().zip(nil.fields()) {
                            let (va, vb) = (a.eval(x).unwrap(), b.eval(x).unwrap());
                            for (p, q) in va.iter().zip(&vb) {
                                worst = worst.max((p - q).abs());
                            }
                        }
                    }
                    result(
                        "self_nilpotent",
                        worst < 1e-12,
                        format!("max coefficient gap {worst:.3e}"),
                    )
                }
                Err(e) => result("self_nilpotent", false, e.to_string()),
            }
        }
        Truth::CommutatorConstant { i, j, k, value } => {
            let frame = entry.frame.as_ref().expect("frame entry");
            let grid = sampling::low_discrepancy_box(frame.weights(), 0.5, 16);
            match verify_commutator_table(frame, &grid) {
                Ok(rep) => {
                    let got = rep.constant(*i, *j, *k).unwrap_or(f64::NAN);
                    let pass = rep.valid && (got - value).abs() < 1e-9;
                    result(
                        &format!("c_{i}{j}{k}"),
                        pass,
                        format!("got {got:.6}, residual {:.3e}", rep.max_residual),
                    )
                }
                Err(e) => result(&format!("c_{i}{j}{k}"), false, e.to_string()),
            }
        }
        Truth::GradedStructure => {
            let frame = entry.frame.as_ref().expect("frame entry");
            match nilpotentize_symbolic(frame)
                .and_then(|nil| check_graded_structure(&nil, frame))
            {
                Ok(rep) => result(
                    "graded_structure",
                    rep.pass,
                    format!(
                        "offgrade {:.3e}, variance {:.3e}, mismatch {:.3e}",
                        rep.max_offgrade, rep.max_variance, rep.max_constant_mismatch
                    ),
                ),
                Err(e) => result("graded_structure", false, e.to_string()),
            }
        }
        Truth::DInfGroupLaw => {
            let frame = entry.frame.as_ref().expect("frame entry");
            let oracle = entry.distance_oracle.as_ref().expect("oracle");
            let mut rng = sampling::seeded_rng(config.seed);
            let mut worst: f64 = 0.0;
            let mut failure = None;
            for _ in 0..50 {
                let x = sampling::random_in_box(&mut rng, frame.weights(), 0.5);
                let y = sampling::random_in_box(&mut rng, frame.weights(), 0.5);
                match d_inf(frame, &config.integrator, &x, &y) {
                    Ok(v) => worst = worst.max((v - oracle(&x, &y)).abs()),
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
            match failure {
                None => result(
                    "d_inf_oracle",
                    worst < 1e-6,
                    format!("max gap {worst:.3e} over 50 pairs"),
                ),
                Some(e) => result("d_inf_oracle", false, e),
            }
        }
        Truth::BoxSandwichHolds { c1_min, c2_max } => {
            let map = entry.map.as_ref().expect("map entry");
            let v = check_box_sandwich(map, &entry.weights, &config.cone_schedule, 256);
            let pass = v.verdict == HoldsVerdict::Holds && v.c1 >= *c1_min && v.c2 <= *c2_max;
            result(
                "box_sandwich",
                pass,
                format!("{} with C1 = {:.4}, C2 = {:.4}", v.verdict, v.c1, v.c2),
            )
        }
        Truth::ConeVerdict {
            pairs,
            expected,
            min_amplitude,
            schedule,
        } => {
            let metric = entry.metric.as_ref().expect("metric entry");
            let pairs = if pairs.is_empty() {
                sampling::low_discrepancy_pairs(&entry.weights, 0.5, 64)
            } else {
                pairs.clone()
            };
            let sched = schedule.unwrap_or(config.cone_schedule);
            let cone = cone_limit(metric, &entry.weights, &pairs, &sched, &config.policy);
            let mut pass = cone.report.verdict == *expected;
            let mut details = format!("verdict {}", cone.report.verdict);
            if let Some(amp) = min_amplitude {
                let worst = cone
                    .report
                    .worst_sample
                    .map(|i| cone.report.samples[i].tail_amplitude)
                    .unwrap_or(0.0);
                pass = pass && worst >= *amp;
                details.push_str(&format!(", worst amplitude {worst:.3}"));
            }
            result("cone", pass, details)
        }
        Truth::MapLimitIs {
            expected,
            identity_limit,
        } => {
            let map = entry.map.as_ref().expect("map entry");
            let grid = sampling::low_discrepancy_box(&entry.weights, 0.5, 32);
            let rep = map_limit(
                map,
                &entry.weights,
                &config.limit_schedule,
                &grid,
                &config.policy,
            );
            let mut pass = rep.verdict == *expected;
            let mut details = format!("verdict {}", rep.verdict);
            if *identity_limit {
                match &rep.limits {
                    Some(limits) => {
                        let mut worst: f64 = 0.0;
                        for (x, l) in grid.iter().zip(limits) {
                            for (a, b) in x.iter().zip(l) {
                                worst = worst.max((a - b).abs());
                            }
                        }
                        pass = pass && worst < 1e-6;
                        details.push_str(&format!(", identity gap {worst:.3e}"));
                    }
                    None => pass = false,
                }
            }
            result("map_limit", pass, details)
        }
        Truth::JacobianLimitIs {
            expected,
            min_amplitude,
        } => {
            let map = entry.map.as_ref().expect("map entry");
            let mut grid = sampling::low_discrepancy_box(&entry.weights, 0.5, 32);
            grid.extend(sampling::axis_points(&entry.weights, 0.5, 0.8));
            match jacobian_limit(
                map,
                &entry.weights,
                &config.limit_schedule,
                &grid,
                &config.policy,
            ) {
                Ok(rep) => {
                    let mut pass = rep.verdict == *expected;
                    let mut details = format!("verdict {}", rep.verdict);
                    if let Some(amp) = min_amplitude {
                        let worst = rep
                            .report
                            .worst_sample
                            .map(|i| rep.report.samples[i].tail_amplitude)
                            .unwrap_or(0.0);
                        pass = pass && worst >= *amp;
                        details.push_str(&format!(", worst amplitude {worst:.3}"));
                    }
                    result("jacobian_limit", pass, details)
                }
                Err(e) => result("jacobian_limit", false, e.to_string()),
            }
        }
        Truth::MetricHomogeneity { tol } => {
            let metric = entry.metric.as_ref().expect("metric entry");
            let pairs = sampling::low_discrepancy_pairs(&entry.weights, 0.5, 50);
            let mut worst: f64 = 0.0;
            let mut failure = None;
            'outer: for (x, y) in &pairs {
                for t in [0.5, 0.25] {
                    let xs = dilate(x, t, &entry.weights).unwrap();
                    let ys = dilate(y, t, &entry.weights).unwrap();
                    match (metric.eval(&xs, &ys), metric.eval(x, y)) {
                        (Ok(scaled), Ok(base)) => {
                            worst = worst.max((scaled - t * base).abs());
                        }
                        (Err(e), _) | (_, Err(e)) => {
                            failure = Some(e.to_string());
                            break 'outer;
                        }
                    }
                }
            }
            match failure {
                None => result(
                    "metric_homogeneity",
                    worst < *tol,
                    format!("max defect {worst:.3e} over 50 pairs"),
                ),
                Some(e) => result("metric_homogeneity", false, e),
            }
        }
        Truth::CurveDivergenceSlope { min_slope } => {
            let frame = entry.frame.as_ref().expect("frame entry");
            let run = nilpotentize_symbolic(frame).and_then(|approx| {
                let eps: Vec<f64> = (2..=10).map(|n| 2f64.powi(-n)).collect();
                curve_divergence(
                    frame,
                    &approx,
                    &default_controls(frame.dim()),
                    &eps,
                    &config.integrator,
                )
            });
            match run {
                Ok(res) => result(
                    "curve_divergence_slope",
                    res.slope > *min_slope,
                    format!("slope {:.3}", res.slope),
                ),
                Err(e) => result("curve_divergence_slope", false, e.to_string()),
            }
        }
    }
}

pub fn run(entry: &GalleryEntry, config: &GalleryConfig) -> EntryReport {
    let results: Vec<TruthResult> = entry
        .truths
        .iter()
        .map(|t| run_truth(entry, t, config))
        .collect();
    EntryReport {
        name: entry.name.clone(),
        pass: results.iter().all(|r| r.pass),
        results,
        notes: entry.notes.clone(),
    }
}

/// Run every entry (entries are independent; executed in parallel).
pub fn run_all(config: &GalleryConfig) -> Vec<EntryReport> {
    NAMES
        .par_iter()
        .map(|name| run(&get(name).unwrap(), config))
        .collect()
}

/// Exportable JSON view of an entry (symbolic objects only).
#[derive(Debug, Clone, Serialize)]
pub struct EntryExport {
    pub name: String,
    pub description: String,
    pub weights: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<FrameSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<MapSpec>,
    pub notes: Vec<String>,
}

pub fn export(name: &str) -> Result<EntryExport> {
    let entry = get(name)?;
    Ok(EntryExport {
        name: entry.name.clone(),
        description: entry.description.clone(),
        weights: entry.weights.to_f64_vec(),
        frame: entry
            .frame
            .as_ref()
            .map(|f| FrameSpec::from_frame(f, Some(name))),
        map: entry.map_spec.clone(),
        notes: entry.notes.clone(),
    })
}
