//! `carnot-lab`: load frame/map/metric specs, run the scaling experiments,
//! emit JSON + CSV reports.
//!
//! Exit codes: 0 on success with all `--expect` assertions met, 1 when a
//! verdict misses an expectation, 2 on input errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;

use carnot_lab::charts::FlowIntegrator;
use carnot_lab::convergence::{Schedule, TolerancePolicy, Verdict};
use carnot_lab::experiments::{curve_divergence, default_controls};
use carnot_lab::gallery;
use carnot_lab::io::{
    cone_csv, read_json, trace_csv, write_json, FrameSpec, MapSpec, MetricSpec,
};
use carnot_lab::nilpotent::{
    check_graded_structure, exp_identity_check, nilpotentize_numeric, nilpotentize_symbolic,
};
use carnot_lab::quasimetric::{
    cone_limit, d_inf, estimate_quasimetric_constants, fit_distance_bounds,
};
use carnot_lab::sampling;
use carnot_lab::geometry::Weights;
use carnot_lab::transition::{
    check_box_sandwich, equivalence_experiment, inverse_map_limit, jacobian_limit, map_limit,
    taylor_vanishing_test,
};
use carnot_lab::quasimetric::isometry_via_cones;

#[derive(Parser)]
#[command(name = "carnot-lab", version, about = "Weighted-scaling laboratory for frames, quasimetrics and coordinate changes")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// First schedule parameter `eps_0`.
    #[arg(long, global = true)]
    schedule_eps0: Option<f64>,
    /// Schedule ratio (`eps_{n+1} = ratio * eps_n`).
    #[arg(long, global = true)]
    schedule_ratio: Option<f64>,
    /// Number of schedule points.
    #[arg(long, global = true)]
    schedule_count: Option<usize>,
    /// Number of interior grid/sample points.
    #[arg(long, global = true, default_value_t = 32)]
    grid: usize,
    /// Convergence tolerance override.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Seed for all stochastic sampling.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Output directory for JSON/CSV reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated verdict assertions, e.g. `c2=converged,taylor=pass`.
    #[arg(long, global = true)]
    expect: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Box quasimetric between two points of a frame.
    Dinf {
        #[arg(long)]
        frame: PathBuf,
        /// Comma-separated coordinates of the first point.
        #[arg(long)]
        x: String,
        /// Comma-separated coordinates of the second point.
        #[arg(long)]
        y: String,
    },
    /// Scaling limit of a metric along the dilation schedule.
    Cone {
        #[arg(long)]
        metric: PathBuf,
        /// JSON list of `[x, y]` pairs; defaults to low-discrepancy samples.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Reference metric: run its cone on the `--l-map`-mapped pairs and
        /// compare the limit tables (requires `--l-map`).
        #[arg(long)]
        against: Option<PathBuf>,
        /// Candidate isometry between the limits, as a JSON map spec.
        #[arg(long)]
        l_map: Option<PathBuf>,
    },
    /// Homogeneous approximation of a frame (symbolic by default).
    Nilpotentize {
        #[arg(long)]
        frame: PathBuf,
        /// Probe the rescaled-field limits numerically as well.
        #[arg(long)]
        numeric: bool,
    },
    /// Decide the scaling conditions for a coordinate change.
    CheckTransition {
        /// JSON map spec (omit when running `--ensemble`).
        map: Option<PathBuf>,
        /// Instead of one map, draw N random polynomial maps (half with a
        /// planted sub-weight term) and verify the four verdicts agree.
        #[arg(long)]
        ensemble: Option<usize>,
        /// Weight system for `--ensemble`, e.g. `1,1,2`.
        #[arg(long)]
        weights: Option<String>,
        /// Also compare the pushforward limits of this frame's fields
        /// against the reference assembled from the sampled map limits.
        #[arg(long)]
        pushforward_frame: Option<PathBuf>,
    },
    /// Endpoint-gap scaling between a frame and its nilpotentization.
    CurveDivergence {
        #[arg(long)]
        frame: PathBuf,
        /// JSON control segments; defaults to a fixed four-segment table.
        #[arg(long)]
        controls: Option<PathBuf>,
    },
    /// Built-in examples with declared ground truth.
    Gallery {
        #[command(subcommand)]
        action: GalleryAction,
    },
}

#[derive(Subcommand)]
enum GalleryAction {
    /// List entry names.
    List,
    /// Run the declared truths of one entry (or all of them).
    Run { name: Option<String> },
    /// Export an entry's symbolic objects as JSON specs.
    Export { name: String },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("CARNOT_LAB_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn schedule_or(cli: &Cli, default: Schedule) -> Result<Schedule> {
    let eps0 = cli.schedule_eps0.unwrap_or(default.eps0);
    let ratio = cli.schedule_ratio.unwrap_or(default.ratio);
    let count = cli.schedule_count.unwrap_or(default.count);
    if !(eps0 > 0.0) || !(ratio > 0.0 && ratio < 1.0) || count < 2 {
        bail!("schedule needs eps0 > 0, 0 < ratio < 1 and at least 2 points");
    }
    Ok(Schedule::new(eps0, ratio, count))
}

fn policy_or_default(cli: &Cli) -> TolerancePolicy {
    let mut policy = TolerancePolicy::default();
    if let Some(tol) = cli.tol {
        policy.convergence_tol = tol;
    }
    policy
}

fn out_dir(cli: &Cli) -> Result<Option<PathBuf>> {
    match &cli.out {
        None => Ok(None),
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))?;
            Ok(Some(dir.clone()))
        }
    }
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::write(dir.join(name), text).with_context(|| format!("writing {name}"))
}

/// Compare produced outcomes against `--expect`; mismatches exit 1,
/// malformed or unknown expectations exit 2.
fn apply_expect(expect: &Option<String>, outcomes: &BTreeMap<String, String>) -> Result<ExitCode> {
    let Some(expect) = expect else {
        return Ok(ExitCode::SUCCESS);
    };
    let mut mismatches = Vec::new();
    for clause in expect.split(',') {
        let (key, want) = clause
            .split_once('=')
            .ok_or_else(|| anyhow!("bad --expect clause `{clause}` (need key=value)"))?;
        let key = key.trim().to_lowercase();
        let want = want.trim().to_lowercase();
        if key == "slope_gt" {
            let threshold: f64 = want
                .parse()
                .map_err(|_| anyhow!("bad slope_gt value `{want}`"))?;
            let actual: f64 = outcomes
                .get("slope")
                .ok_or_else(|| anyhow!("no slope outcome for slope_gt"))?
                .parse()
                .unwrap_or(f64::NAN);
            if !(actual > threshold) {
                mismatches.push(format!("slope {actual} not > {threshold}"));
            }
            continue;
        }
        match outcomes.get(&key) {
            None => bail!(
                "unknown --expect key `{key}` (have: {})",
                outcomes.keys().cloned().collect::<Vec<_>>().join(", ")
            ),
            Some(actual) if *actual == want => {}
            Some(actual) => mismatches.push(format!("{key}: expected {want}, got {actual}")),
        }
    }
    if mismatches.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for m in &mismatches {
            eprintln!("expectation failed: {m}");
        }
        Ok(ExitCode::from(1))
    }
}

fn parse_point(text: &str, dim: usize) -> Result<Vec<f64>> {
    let p: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| anyhow!("bad coordinate `{t}`: {e}")))
        .collect::<Result<_>>()?;
    if p.len() != dim {
        bail!("point `{text}` has {} coordinates, frame needs {dim}", p.len());
    }
    Ok(p)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Dinf { frame, x, y } => cmd_dinf(&cli, frame, x, y),
        Command::Cone {
            metric,
            pairs,
            against,
            l_map,
        } => cmd_cone(
            &cli,
            metric,
            pairs.as_deref(),
            against.as_deref(),
            l_map.as_deref(),
        ),
        Command::Nilpotentize { frame, numeric } => cmd_nilpotentize(&cli, frame, *numeric),
        Command::CheckTransition {
            map,
            ensemble,
            weights,
            pushforward_frame,
        } => match (map, ensemble) {
            (_, Some(count)) => cmd_equivalence(&cli, *count, weights.as_deref()),
            (Some(map), None) => cmd_check_transition(&cli, map, pushforward_frame.as_deref()),
            (None, None) => bail!("check-transition needs a map spec or --ensemble N"),
        },
        Command::CurveDivergence { frame, controls } => {
            cmd_curve_divergence(&cli, frame, controls.as_deref())
        }
        Command::Gallery { action } => cmd_gallery(&cli, action),
    }
}

// ------------------------------------------------------------------ dinf

#[derive(Serialize)]
struct DinfReport {
    x: Vec<f64>,
    y: Vec<f64>,
    d_inf: f64,
}

fn cmd_dinf(cli: &Cli, frame_path: &Path, x: &str, y: &str) -> Result<ExitCode> {
    let spec: FrameSpec = read_json(frame_path)?;
    let frame = spec.to_frame()?;
    let x = parse_point(x, frame.dim())?;
    let y = parse_point(y, frame.dim())?;
    let value = d_inf(&frame, &FlowIntegrator::default(), &x, &y)?;
    let report = DinfReport { x, y, d_inf: value };
    print_json(&report)?;
    if let Some(dir) = out_dir(cli)? {
        write_json(&dir.join("dinf.json"), &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

// ------------------------------------------------------------------ cone

#[derive(Serialize)]
struct ConeSummary {
    verdict: Verdict,
    pairs: usize,
    homogeneity_defect: Option<f64>,
    limit_table: Option<Vec<f64>>,
    /// Empirical quasimetric constants over the sample set.
    q_constant: Option<f64>,
    symmetry_constant: Option<f64>,
    /// Two-sided quasinorm comparison of `d(0, .)`.
    c1: Option<f64>,
    c2: Option<f64>,
    /// Filled when a reference cone is compared via `--against`/`--l-map`.
    against_verdict: Option<Verdict>,
    isometry_discrepancy: Option<f64>,
}

fn cmd_cone(
    cli: &Cli,
    metric_path: &Path,
    pairs_path: Option<&Path>,
    against: Option<&Path>,
    l_map: Option<&Path>,
) -> Result<ExitCode> {
    let spec: MetricSpec = read_json(metric_path)?;
    let (metric, weights) = spec.build()?;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = match pairs_path {
        Some(p) => read_json(p)?,
        None => sampling::low_discrepancy_pairs(&weights, 0.5, cli.grid.max(2)),
    };
    let schedule = schedule_or(cli, Schedule::cone_default())?;
    let policy = policy_or_default(cli);
    let cone = cone_limit(&metric, &weights, &pairs, &schedule, &policy);

    let mut outcomes = BTreeMap::new();
    outcomes.insert("cone".to_string(), cone.report.verdict.to_string());

    // isometry comparison against a reference cone
    let mut against_verdict = None;
    let mut isometry_discrepancy = None;
    match (against, l_map) {
        (Some(against), Some(l_map)) => {
            let against_spec: MetricSpec = read_json(against)?;
            let (reference, _) = against_spec.build()?;
            let l_spec: MapSpec = read_json(l_map)?;
            let (l, _) = l_spec.build()?;
            let dim = l.dim;
            let l_fn = move |x: &[f64]| l.eval(x).unwrap_or_else(|_| vec![f64::NAN; dim]);
            match isometry_via_cones(
                &reference, &metric, &l_fn, &weights, &pairs, &schedule, &policy,
            ) {
                Ok((rep, _, d_cone)) => {
                    against_verdict = Some(d_cone.report.verdict);
                    isometry_discrepancy = Some(rep.max_discrepancy);
                    outcomes.insert(
                        "isometry".to_string(),
                        if rep.max_discrepancy < 1e-4 { "pass" } else { "fail" }.to_string(),
                    );
                }
                Err(e) => {
                    eprintln!("isometry comparison unavailable: {e}");
                    outcomes.insert("isometry".to_string(), "unavailable".to_string());
                }
            }
        }
        (None, None) => {}
        _ => bail!("--against and --l-map must be given together"),
    }

    // constants over the sampled points, best effort
    let points: Vec<Vec<f64>> = pairs
        .iter()
        .flat_map(|(x, y)| [x.clone(), y.clone()])
        .collect();
    let triples: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = points
        .windows(3)
        .map(|w| (w[0].clone(), w[1].clone(), w[2].clone()))
        .collect();
    let qc = estimate_quasimetric_constants(&metric, &triples).ok();
    let bounds = fit_distance_bounds(&metric, &weights, &points).ok();

    let summary = ConeSummary {
        verdict: cone.report.verdict,
        pairs: pairs.len(),
        homogeneity_defect: cone.homogeneity_defect,
        limit_table: cone.limit_table.as_ref().map(|t| t.values.clone()),
        q_constant: qc.map(|(q, _)| q),
        symmetry_constant: qc.map(|(_, c)| c),
        c1: bounds.map(|(c1, _)| c1),
        c2: bounds.map(|(_, c2)| c2),
        against_verdict,
        isometry_discrepancy,
    };
    print_json(&summary)?;
    if let Some(dir) = out_dir(cli)? {
        write_text(&dir, "cone.csv", &cone_csv(&cone))?;
        write_json(&dir.join("cone.json"), &summary)?;
    }
    apply_expect(&cli.expect, &outcomes)
}

// ---------------------------------------------------------- nilpotentize

#[derive(Serialize)]
struct NilpotentizeSummary {
    graded: Option<String>,
    exp_identity: Option<String>,
    numeric: Option<Verdict>,
    graded_max_mismatch: Option<f64>,
    exp_identity_deviation: Option<f64>,
    /// Nonzero `c_ijk` of the input frame at its base point.
    structure_constants: Vec<(String, f64)>,
    commutator_table_valid: bool,
    commutator_residual: f64,
}

fn cmd_nilpotentize(cli: &Cli, frame_path: &Path, numeric: bool) -> Result<ExitCode> {
    let spec: FrameSpec = read_json(frame_path)?;
    let frame = spec.to_frame()?;
    let policy = policy_or_default(cli);
    let schedule = schedule_or(cli, Schedule::limit_default())?;

    let grid = sampling::low_discrepancy_box(frame.weights(), 0.5, 16);
    let table = carnot_lab::frames::verify_commutator_table(&frame, &grid)?;
    let structure_constants = table
        .constants_at_base
        .iter()
        .filter(|(_, v)| v.abs() > 1e-9)
        .map(|((i, j, k), v)| (format!("c_{i}{j}{k}"), *v))
        .collect();

    let mut outcomes = BTreeMap::new();
    let mut summary = NilpotentizeSummary {
        graded: None,
        exp_identity: None,
        numeric: None,
        graded_max_mismatch: None,
        exp_identity_deviation: None,
        structure_constants,
        commutator_table_valid: table.valid,
        commutator_residual: table.max_residual,
    };

    let nil = nilpotentize_symbolic(&frame)?;
    let graded = check_graded_structure(&nil, &frame)?;
    let expid = exp_identity_check(&nil, &FlowIntegrator::default(), cli.seed, 100)?;
    let pass_fail = |b: bool| if b { "pass" } else { "fail" }.to_string();
    outcomes.insert("graded".to_string(), pass_fail(graded.pass));
    outcomes.insert("exp_identity".to_string(), pass_fail(expid.pass));
    summary.graded = Some(pass_fail(graded.pass));
    summary.exp_identity = Some(pass_fail(expid.pass));
    summary.graded_max_mismatch = Some(graded.max_constant_mismatch);
    summary.exp_identity_deviation = Some(expid.max_deviation);

    if numeric {
        let grid = carnot_lab::nilpotent::default_grid(frame.weights(), 0.5);
        let num = nilpotentize_numeric(&frame, &schedule, &grid, &policy)?;
        outcomes.insert("numeric".to_string(), num.verdict.to_string());
        summary.numeric = Some(num.verdict);
    }

    print_json(&summary)?;
    if let Some(dir) = out_dir(cli)? {
        write_json(
            &dir.join("nilpotentized.json"),
            &FrameSpec::from_frame(&nil, Some("nilpotentized")),
        )?;
        write_json(&dir.join("nilpotentize.json"), &summary)?;
    }
    apply_expect(&cli.expect, &outcomes)
}

// ------------------------------------------------------- check-transition

#[derive(Serialize)]
struct TransitionSummary {
    c1: String,
    c2: String,
    c3: String,
    taylor: String,
    inverse: Option<String>,
    pushforward: Option<String>,
    box_c1: f64,
    box_c2: f64,
    box_note: String,
    map_homogeneity_defect: Option<f64>,
    det_lambda_origin: Option<f64>,
    dl_defect: Option<f64>,
    pushforward_discrepancy: Option<f64>,
    offending_multiindices: Vec<(usize, Vec<usize>, f64)>,
}

#[derive(Serialize)]
struct EnsembleSummary {
    total: usize,
    agreements: usize,
    pass: bool,
    disagreements: Vec<(usize, String)>,
    chain_violations: Vec<(usize, String)>,
}

/// Four-condition agreement experiment on seeded random polynomial maps.
fn cmd_equivalence(cli: &Cli, count: usize, weights: Option<&str>) -> Result<ExitCode> {
    let weights = weights.ok_or_else(|| anyhow!("--ensemble requires --weights"))?;
    let parsed: Vec<f64> = weights
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| anyhow!("bad weight `{t}`: {e}")))
        .collect::<Result<_>>()?;
    let sigma = Weights::from_f64s(&parsed)?;
    let schedule = schedule_or(cli, Schedule::limit_default())?;
    let policy = policy_or_default(cli);
    let rep = equivalence_experiment(&sigma, count, cli.seed, &schedule, &policy)?;
    let summary = EnsembleSummary {
        total: rep.total,
        agreements: rep.agreements,
        pass: rep.pass,
        disagreements: rep.disagreements.clone(),
        chain_violations: rep.chain_violations.clone(),
    };
    print_json(&summary)?;
    if let Some(dir) = out_dir(cli)? {
        write_json(&dir.join("equivalence.json"), &summary)?;
    }
    let mut outcomes = BTreeMap::new();
    outcomes.insert(
        "agreement".to_string(),
        if rep.pass { "pass" } else { "fail" }.to_string(),
    );
    apply_expect(&cli.expect, &outcomes)
}

fn cmd_check_transition(
    cli: &Cli,
    map_path: &Path,
    pushforward_frame: Option<&Path>,
) -> Result<ExitCode> {
    let spec: MapSpec = read_json(map_path)?;
    let (map, weights) = spec.build()?;
    let policy = policy_or_default(cli);
    let cone_schedule = schedule_or(cli, Schedule::cone_default())?;
    let limit_schedule = schedule_or(cli, Schedule::limit_default())?;

    let sandwich = check_box_sandwich(&map, &weights, &cone_schedule, 256);

    let interior = sampling::low_discrepancy_box(&weights, 0.5, cli.grid);
    let mut jac_grid = interior.clone();
    jac_grid.extend(sampling::axis_points(&weights, 0.5, 0.8));

    let ml = map_limit(&map, &weights, &limit_schedule, &interior, &policy);
    let jac = jacobian_limit(&map, &weights, &limit_schedule, &jac_grid, &policy);
    let taylor = taylor_vanishing_test(&map, &weights);

    let inverse = if map.has_inverse() && ml.verdict == Verdict::Converged {
        match inverse_map_limit(&map, &weights, &limit_schedule, &interior, &policy) {
            Ok(rep) => Some(if rep.pass { "pass".to_string() } else { "fail".to_string() }),
            Err(_) => Some("unavailable".to_string()),
        }
    } else {
        None
    };

    // pushforward limits of a frame's fields under the map
    let mut pushforward = None;
    let mut pushforward_discrepancy = None;
    if let Some(frame_path) = pushforward_frame {
        let frame_spec: FrameSpec = read_json(frame_path)?;
        let frame = frame_spec.to_frame()?;
        if frame.weights() != &weights {
            bail!("pushforward frame weights differ from the map's weights");
        }
        let mut worst: f64 = 0.0;
        let mut outcome = "pass";
        for (k, field) in frame.fields().iter().enumerate() {
            match carnot_lab::transition::pushforward_limit_check(
                &map,
                field,
                frame.weights().get(k),
                &weights,
                &limit_schedule,
                &interior,
                &policy,
            ) {
                Ok(rep) => {
                    worst = worst.max(rep.max_discrepancy);
                    if !rep.pass {
                        outcome = "fail";
                    }
                }
                Err(carnot_lab::Error::Precondition(_))
                | Err(carnot_lab::Error::SingularLambda) => {
                    outcome = "refused";
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        pushforward = Some(outcome.to_string());
        pushforward_discrepancy = (outcome == "pass" || outcome == "fail").then_some(worst);
    }

    let mut outcomes = BTreeMap::new();
    outcomes.insert("c1".to_string(), sandwich.verdict.to_string());
    outcomes.insert("c2".to_string(), ml.verdict.to_string());
    let c3 = match &jac {
        Ok(rep) => rep.verdict.to_string(),
        Err(_) => "unavailable".to_string(),
    };
    outcomes.insert("c3".to_string(), c3.clone());
    let taylor_str = match &taylor {
        Ok(rep) => if rep.pass { "pass" } else { "fail" }.to_string(),
        Err(_) => "unavailable".to_string(),
    };
    outcomes.insert("taylor".to_string(), taylor_str.clone());
    if let Some(inv) = &inverse {
        outcomes.insert("inverse".to_string(), inv.clone());
    }
    if let Some(p) = &pushforward {
        outcomes.insert("pushforward".to_string(), p.clone());
    }

    let summary = TransitionSummary {
        c1: sandwich.verdict.to_string(),
        c2: ml.verdict.to_string(),
        c3,
        taylor: taylor_str,
        inverse,
        pushforward,
        box_c1: sandwich.c1,
        box_c2: sandwich.c2,
        box_note: sandwich.note.clone(),
        map_homogeneity_defect: ml.homogeneity_defect,
        det_lambda_origin: jac.as_ref().ok().and_then(|j| j.det_lambda_origin),
        dl_defect: jac.as_ref().ok().and_then(|j| j.dl_defect),
        pushforward_discrepancy,
        offending_multiindices: taylor.map(|t| t.offending).unwrap_or_default(),
    };
    print_json(&summary)?;

    if let Some(dir) = out_dir(cli)? {
        write_json(&dir.join("transition.json"), &summary)?;
        write_text(
            &dir,
            "map_limit.csv",
            &trace_csv(&ml.report.epsilons, &ml.report.samples),
        )?;
        if let Ok(j) = &jac {
            write_text(
                &dir,
                "jacobian.csv",
                &trace_csv(&j.report.epsilons, &j.report.samples),
            )?;
        }
        let mut box_rows = String::from("eps,c1,c2\n");
        for ((eps, c1), c2) in sandwich
            .epsilons
            .iter()
            .zip(&sandwich.c1_trace)
            .zip(&sandwich.c2_trace)
        {
            let fmt = |v: &Option<f64>| v.map(|v| v.to_string()).unwrap_or_else(|| "error".into());
            box_rows.push_str(&format!("{eps},{},{}\n", fmt(c1), fmt(c2)));
        }
        write_text(&dir, "box.csv", &box_rows)?;
    }
    apply_expect(&cli.expect, &outcomes)
}

// ------------------------------------------------------- curve-divergence

#[derive(Serialize)]
struct CurveSummary {
    slope: f64,
    points: Vec<(f64, f64)>,
}

fn cmd_curve_divergence(
    cli: &Cli,
    frame_path: &Path,
    controls_path: Option<&Path>,
) -> Result<ExitCode> {
    let spec: FrameSpec = read_json(frame_path)?;
    let frame = spec.to_frame()?;
    let approx = nilpotentize_symbolic(&frame)?;
    let controls = match controls_path {
        Some(p) => read_json(p)?,
        None => default_controls(frame.dim()),
    };
    let schedule = schedule_or(cli, Schedule::new(0.25, 0.5, 9))?;
    let res = curve_divergence(
        &frame,
        &approx,
        &controls,
        &schedule.epsilons(),
        &FlowIntegrator::default(),
    )?;
    let summary = CurveSummary {
        slope: res.slope,
        points: res.points.iter().map(|p| (p.eps, p.distance)).collect(),
    };
    print_json(&summary)?;
    if let Some(dir) = out_dir(cli)? {
        let mut csv = String::from("eps,distance\n");
        for (eps, d) in &summary.points {
            csv.push_str(&format!("{eps},{d}\n"));
        }
        write_text(&dir, "curve_divergence.csv", &csv)?;
        write_json(&dir.join("curve_divergence.json"), &summary)?;
    }
    let mut outcomes = BTreeMap::new();
    outcomes.insert("slope".to_string(), res.slope.to_string());
    apply_expect(&cli.expect, &outcomes)
}

// ---------------------------------------------------------------- gallery

fn cmd_gallery(cli: &Cli, action: &GalleryAction) -> Result<ExitCode> {
    match action {
        GalleryAction::List => {
            for name in gallery::list() {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
        GalleryAction::Run { name } => {
            let config = gallery::GalleryConfig {
                cone_schedule: schedule_or(cli, Schedule::cone_default())?,
                limit_schedule: schedule_or(cli, Schedule::limit_default())?,
                policy: policy_or_default(cli),
                integrator: FlowIntegrator::default(),
                seed: cli.seed,
            };
            let reports = match name {
                Some(name) => vec![gallery::run(&gallery::get(name)?, &config)],
                None => gallery::run_all(&config),
            };
            let mut all_pass = true;
            for rep in &reports {
                all_pass &= rep.pass;
                println!("{} {}", if rep.pass { "PASS" } else { "FAIL" }, rep.name);
                for r in &rep.results {
                    println!(
                        "  [{}] {}: {}",
                        if r.pass { "ok" } else { "FAIL" },
                        r.label,
                        r.details
                    );
                }
            }
            if let Some(dir) = out_dir(cli)? {
                write_json(&dir.join("gallery.json"), &reports)?;
            }
            Ok(if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        GalleryAction::Export { name } => {
            let export = gallery::export(name)?;
            print_json(&export)?;
            if let Some(dir) = out_dir(cli)? {
                write_json(&dir.join(format!("{name}.json")), &export)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
