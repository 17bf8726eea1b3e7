//! Flow-based coordinate systems.
//!
//! The exponential map integrates a frozen combination `sum u_i X_i` with a
//! fixed-step classical Runge-Kutta scheme (deterministic across runs, no
//! adaptive controller). Chart inverses are Newton iterations on the flow
//! with finite-difference Jacobians, since a `C^1` frame need not admit
//! symbolic variational equations.

use crate::error::{Error, Result};
use crate::frames::WeightedFrame;
use crate::geometry::quasinorm;
use crate::linalg;

/// Fixed-step RK4 driver.
#[derive(Debug, Clone, Copy)]
pub struct FlowIntegrator {
    pub steps_per_unit: usize,
    /// Trajectories may wander this factor beyond the frame radius before
    /// the integration aborts with `TrajectoryEscape`.
    pub escape_slack: f64,
}

impl Default for FlowIntegrator {
    fn default() -> Self {
        FlowIntegrator {
            steps_per_unit: 256,
            escape_slack: 2.0,
        }
    }
}

impl FlowIntegrator {
    pub fn with_steps(steps_per_unit: usize) -> Self {
        FlowIntegrator {
            steps_per_unit,
            ..Default::default()
        }
    }

    /// Integrate `dx/dt = rhs(x)` over `[0, duration]`.
    pub fn integrate<F>(
        &self,
        rhs: F,
        start: &[f64],
        duration: f64,
        escape: &dyn Fn(&[f64]) -> bool,
    ) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>>,
    {
        if duration == 0.0 {
            return Ok(start.to_vec());
        }
        let steps = ((self.steps_per_unit as f64 * duration.abs()).ceil() as usize).max(1);
        let h = duration / steps as f64;
        let mut x = start.to_vec();
        let eval = |x: &[f64], t: f64| -> Result<Vec<f64>> {
            rhs(x).map_err(|e| Error::StepFailure {
                t,
                reason: e.to_string(),
            })
        };
        for step in 0..steps {
            let t = step as f64 * h;
            let k1 = eval(&x, t)?;
            let x2: Vec<f64> = x.iter().zip(&k1).map(|(v, k)| v + 0.5 * h * k).collect();
            let k2 = eval(&x2, t)?;
            let x3: Vec<f64> = x.iter().zip(&k2).map(|(v, k)| v + 0.5 * h * k).collect();
            let k3 = eval(&x3, t)?;
            let x4: Vec<f64> = x.iter().zip(&k3).map(|(v, k)| v + h * k).collect();
            let k4 = eval(&x4, t)?;
            for i in 0..x.len() {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::StepFailure {
                    t,
                    reason: "state became non-finite".to_string(),
                });
            }
            if escape(&x) {
                return Err(Error::TrajectoryEscape { t, state: x });
            }
        }
        Ok(x)
    }
}

fn frame_escape<'a>(frame: &'a WeightedFrame) -> impl Fn(&[f64]) -> bool + 'a {
    let bound = frame.radius() * 2.0;
    move |x: &[f64]| {
        let rel: Vec<f64> = x
            .iter()
            .zip(frame.base_point())
            .map(|(a, b)| a - b)
            .collect();
        quasinorm(&rel, frame.weights()) > bound
    }
}

/// Value at time `duration` of the integral curve of `sum u_i X_i`.
pub fn flow_for(
    frame: &WeightedFrame,
    integ: &FlowIntegrator,
    u: &[f64],
    start: &[f64],
    duration: f64,
) -> Result<Vec<f64>> {
    let rhs = |x: &[f64]| -> Result<Vec<f64>> {
        let mut v = vec![0.0; frame.dim()];
        for (i, field) in frame.fields().iter().enumerate() {
            if u[i] == 0.0 {
                continue;
            }
            let fx = field.eval(x)?;
            for (vi, fi) in v.iter_mut().zip(fx) {
                *vi += u[i] * fi;
            }
        }
        Ok(v)
    };
    integ.integrate(rhs, start, duration, &frame_escape(frame))
}

/// `exp(sum u_i X_i)(start)`: time-1 flow of the frozen combination.
pub fn exp_map(
    frame: &WeightedFrame,
    integ: &FlowIntegrator,
    u: &[f64],
    start: &[f64],
) -> Result<Vec<f64>> {
    flow_for(frame, integ, u, start, 1.0)
}

/// Canonical coordinates of the 1st kind based at the frame's base point.
pub fn theta1(frame: &WeightedFrame, integ: &FlowIntegrator, u: &[f64]) -> Result<Vec<f64>> {
    exp_map(frame, integ, u, frame.base_point())
}

/// Newton controls shared by every chart inversion.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub residual_tol: f64,
    pub max_iterations: usize,
    pub fd_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            residual_tol: 1e-10,
            max_iterations: 50,
            fd_step: 1e-6,
        }
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solve `f(u) = target` by damped Newton from `guess`, Jacobian by central
/// finite differences.
pub fn newton_invert<F>(
    f: F,
    target: &[f64],
    guess: &[f64],
    opts: &NewtonOptions,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = target.len();
    let mut u = guess.to_vec();
    let residual_of = |u: &[f64]| -> Result<Vec<f64>> {
        Ok(f(u)?.iter().zip(target).map(|(a, b)| a - b).collect())
    };
    let mut r = residual_of(&u)?;
    let mut res = sup_norm(&r);
    for iter in 0..opts.max_iterations {
        if res < opts.residual_tol {
            return Ok(u);
        }
        // central-difference Jacobian, column by column
        let mut jac = vec![vec![0.0; n]; n];
        for l in 0..n {
            let mut up = u.clone();
            let mut um = u.clone();
            up[l] += opts.fd_step;
            um[l] -= opts.fd_step;
            let fp = f(&up)?;
            let fm = f(&um)?;
            for k in 0..n {
                jac[k][l] = (fp[k] - fm[k]) / (2.0 * opts.fd_step);
            }
        }
        let step = linalg::solve(&jac, &r).map_err(|_| Error::NewtonDivergence {
            iterations: iter,
            residual: res,
        })?;
        // halving line search on the residual norm
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let candidate: Vec<f64> = u.iter().zip(&step).map(|(v, s)| v - t * s).collect();
            match residual_of(&candidate) {
                Ok(rc) => {
                    let rn = sup_norm(&rc);
                    if rn < res {
                        u = candidate;
                        r = rc;
                        res = rn;
                        improved = true;
                        break;
                    }
                }
                Err(_) => {}
            }
            t *= 0.5;
        }
        if !improved {
            return Err(Error::NewtonDivergence {
                iterations: iter,
                residual: res,
            });
        }
    }
    if res < opts.residual_tol {
        Ok(u)
    } else {
        Err(Error::NewtonDivergence {
            iterations: opts.max_iterations,
            residual: res,
        })
    }
}

/// Invert the 1st-kind chart centered at `x`: find `u` with
/// `exp(sum u_i X_i)(x) = y`. Initial guess is always 0; the construction
/// is local, so basin failures are reported rather than worked around.
pub fn theta1_inv(
    frame: &WeightedFrame,
    integ: &FlowIntegrator,
    x: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    theta1_inv_with(frame, integ, x, y, &NewtonOptions::default())
}

/// `theta1_inv` with explicit Newton controls. Experiments that resolve
/// distances far below the default residual tolerance (endpoint gaps of
/// order `eps^3`) need a much tighter target.
pub fn theta1_inv_with(
    frame: &WeightedFrame,
    integ: &FlowIntegrator,
    x: &[f64],
    y: &[f64],
    opts: &NewtonOptions,
) -> Result<Vec<f64>> {
    newton_invert(
        |u| exp_map(frame, integ, u, x),
        y,
        &vec![0.0; frame.dim()],
        opts,
    )
}

fn validate_partition(partition: &[Vec<usize>], dim: usize) -> Result<()> {
    let mut seen = vec![false; dim];
    for group in partition {
        for &i in group {
            if i == 0 || i > dim {
                return Err(Error::BadPartition {
                    dim,
                    reason: format!("index {i} out of range"),
                });
            }
            if seen[i - 1] {
                return Err(Error::BadPartition {
                    dim,
                    reason: format!("index {i} repeated"),
                });
            }
            seen[i - 1] = true;
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::BadPartition {
            dim,
            reason: format!("index {} missing", i + 1),
        });
    }
    Ok(())
}

/// Grouped coordinates: compose the exponentials of the partition groups,
/// first group flowing first from the base point. With one group this is
/// `theta1`; with singletons `[[1],[2],...,[N]]` it is the canonical
/// coordinates of the 2nd kind.
pub fn phi_grouped(
    frame: &WeightedFrame,
    integ: &FlowIntegrator,
    partition: &[Vec<usize>],
    u: &[f64],
) -> Result<Vec<f64>> {
    validate_partition(partition, frame.dim())?;
    let mut x = frame.base_point().to_vec();
    for group in partition {
        let mut ug = vec![0.0; frame.dim()];
        for &i in group {
            ug[i - 1] = u[i - 1];
        }
        x = exp_map(frame, integ, &ug, &x)?;
    }
    Ok(x)
}

/// Singleton partition `[[1],[2],...,[N]]`.
pub fn singleton_partition(dim: usize) -> Vec<Vec<usize>> {
    (1..=dim).map(|i| vec![i]).collect()
}

#[derive(Debug, Clone)]
pub enum ChartKind {
    FirstKind,
    Grouped(Vec<Vec<usize>>),
}

/// A coordinate system realized as forward flow plus Newton inverse.
#[derive(Debug, Clone)]
pub struct Chart {
    pub frame: WeightedFrame,
    pub kind: ChartKind,
    pub integrator: FlowIntegrator,
    pub newton: NewtonOptions,
}

impl Chart {
    pub fn first_kind(frame: WeightedFrame) -> Chart {
        Chart {
            frame,
            kind: ChartKind::FirstKind,
            integrator: FlowIntegrator::default(),
            newton: NewtonOptions::default(),
        }
    }

    pub fn grouped(frame: WeightedFrame, partition: Vec<Vec<usize>>) -> Result<Chart> {
        validate_partition(&partition, frame.dim())?;
        Ok(Chart {
            frame,
            kind: ChartKind::Grouped(partition),
            integrator: FlowIntegrator::default(),
            newton: NewtonOptions::default(),
        })
    }

    pub fn second_kind(frame: WeightedFrame) -> Chart {
        let partition = singleton_partition(frame.dim());
        Chart {
            frame,
            kind: ChartKind::Grouped(partition),
            integrator: FlowIntegrator::default(),
            newton: NewtonOptions::default(),
        }
    }

    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            ChartKind::FirstKind => theta1(&self.frame, &self.integrator, u),
            ChartKind::Grouped(partition) => {
                phi_grouped(&self.frame, &self.integrator, partition, u)
            }
        }
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        newton_invert(
            |u| self.forward(u),
            y,
            &vec![0.0; self.frame.dim()],
            &self.newton,
        )
    }
}

/// Piecewise-constant control segment on `[t0, t1]`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ControlSegment {
    pub t0: f64,
    pub t1: f64,
    pub b: Vec<f64>,
}

pub fn validate_controls(controls: &[ControlSegment], dim: usize) -> Result<()> {
    if controls.is_empty() {
        return Err(Error::BadInput("empty control list".to_string()));
    }
    let mut t = 0.0;
    for seg in controls {
        if (seg.t0 - t).abs() > 1e-12 || seg.t1 <= seg.t0 {
            return Err(Error::BadInput(format!(
                "control segments must tile [0,1]; got [{}, {}] after t={t}",
                seg.t0, seg.t1
            )));
        }
        if seg.b.len() != dim {
            return Err(Error::BadInput("control dimension mismatch".to_string()));
        }
        t = seg.t1;
    }
    if (t - 1.0).abs() > 1e-12 {
        return Err(Error::BadInput(format!("controls end at t={t}, not 1")));
    }
    Ok(())
}

/// Drive `gamma' = sum b_i(t) X_i(gamma)` for one frame.
pub fn drive_curve(
    frame: &WeightedFrame,
    integ: &FlowIntegrator,
    controls: &[ControlSegment],
    start: &[f64],
) -> Result<Vec<f64>> {
    validate_controls(controls, frame.dim())?;
    let mut x = start.to_vec();
    for seg in controls {
        x = flow_for(frame, integ, &seg.b, &x, seg.t1 - seg.t0)?;
    }
    Ok(x)
}

/// Endpoints of the two curves driven by identical controls in `frame`
/// and in `approx` (typically the nilpotentized frame).
pub fn curve_pair(
    frame: &WeightedFrame,
    approx: &WeightedFrame,
    integ: &FlowIntegrator,
    controls: &[ControlSegment],
    start: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let a = drive_curve(frame, integ, controls, start)?;
    let b = drive_curve(approx, integ, controls, start)?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Expr};
    use crate::geometry::Weights;
    use crate::sampling;

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

    // group law oracle: x * u
    fn heis_mul(x: &[f64], u: &[f64]) -> Vec<f64> {
        vec![
            x[0] + u[0],
            x[1] + u[1],
            x[2] + u[2] + 0.5 * (x[0] * u[1] - x[1] * u[0]),
        ]
    }

    #[test]
    fn exp_map_matches_group_law() {
        let f = heisenberg();
        let integ = FlowIntegrator::default();
        let mut rng = sampling::seeded_rng(7);
        for _ in 0..20 {
            let x = sampling::random_in_box(&mut rng, f.weights(), 0.4);
            let u = sampling::random_in_box(&mut rng, f.weights(), 0.4);
            let got = exp_map(&f, &integ, &u, &x).unwrap();
            let want = heis_mul(&x, &u);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn exp_map_identity_cases() {
        let f = heisenberg();
        let integ = FlowIntegrator::default();
        let start = vec![0.2, -0.1, 0.05];
        assert_eq!(exp_map(&f, &integ, &[0.0; 3], &start).unwrap(), start);

        let flat = WeightedFrame::new(
            vec![
                vec![e("1", 2), e("0", 2)],
                vec![e("0", 2), e("1", 2)],
            ],
            Weights::integers(&[1, 1]).unwrap(),
            vec![0.0; 2],
            10.0,
        )
        .unwrap();
        let got = exp_map(&flat, &integ, &[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(got, vec![4.0, 6.0]);
    }

    #[test]
    fn integrator_is_fourth_order_on_exponential_flow() {
        // X = x d/dx from 1: exp(u X)(1) = e^u; RK4 error must fall like h^4.
        let f = WeightedFrame::new(
            vec![vec![e("x1", 1)]],
            Weights::integers(&[1]).unwrap(),
            vec![1.0],
            2.0,
        )
        .unwrap();
        let mut errors = Vec::new();
        for steps in [4usize, 8, 16, 32, 64] {
            let integ = FlowIntegrator::with_steps(steps);
            let got = exp_map(&f, &integ, &[1.0], &[1.0]).unwrap();
            errors.push((got[0] - 1f64.exp()).abs());
        }
        for w in errors.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((slope - 4.0).abs() < 0.3, "slope {slope}, errors {errors:?}");
        }
    }

    #[test]
    fn flow_restart_consistency() {
        let f = heisenberg();
        let integ = FlowIntegrator::default();
        let u = [0.3, -0.2, 0.1];
        let one_leg = exp_map(&f, &integ, &u, &[0.1, 0.1, 0.0]).unwrap();
        let mid = flow_for(&f, &integ, &u, &[0.1, 0.1, 0.0], 0.5).unwrap();
        let two_leg = flow_for(&f, &integ, &u, &mid, 0.5).unwrap();
        for (a, b) in one_leg.iter().zip(&two_leg) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn theta1_inv_heisenberg_oracles() {
        let f = heisenberg();
        let integ = FlowIntegrator::default();
        // centered at origin the chart is the identity
        let u = theta1_inv(&f, &integ, &[0.0; 3], &[0.2, -0.3, 0.1]).unwrap();
        for (a, b) in u.iter().zip(&[0.2, -0.3, 0.1]) {
            assert!((a - b).abs() < 1e-9);
        }
        // theta1_inv(x, x) = 0
        let z = theta1_inv(&f, &integ, &[0.3, 0.1, -0.2], &[0.3, 0.1, -0.2]).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-9));
        // group-law oracle: x = (1,0,0), y = (1,1,0) -> u = (0,1,-1/2)
        // (frame radius must cover the trip from x)
        let far = WeightedFrame::new(
            vec![
                vec![e("1", 3), e("0", 3), e("-x2/2", 3)],
                vec![e("0", 3), e("1", 3), e("x1/2", 3)],
                vec![e("0", 3), e("0", 3), e("1", 3)],
            ],
            Weights::integers(&[1, 1, 2]).unwrap(),
            vec![0.0; 3],
            3.0,
        )
        .unwrap();
        let u = theta1_inv(&far, &integ, &[1.0, 0.0, 0.0], &[1.0, 1.0, 0.0]).unwrap();
        let want = [0.0, 1.0, -0.5];
        for (a, b) in u.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9, "{u:?}");
        }
    }

    #[test]
    fn chart_inverse_roundtrip() {
        let f = heisenberg();
        let integ = FlowIntegrator::default();
        let mut rng = sampling::seeded_rng(11);
        for _ in 0..100 {
            let x = sampling::random_in_box(&mut rng, f.weights(), 0.5);
            let u = sampling::random_in_box(&mut rng, f.weights(), 0.5);
            let y = exp_map(&f, &integ, &u, &x).unwrap();
            let back = theta1_inv(&f, &integ, &x, &y).unwrap();
            for (a, b) in back.iter().zip(&u) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn second_kind_heisenberg_closed_form() {
        let f = heisenberg();
        let integ = FlowIntegrator::default();
        let partition = singleton_partition(3);
        let mut rng = sampling::seeded_rng(3);
        for _ in 0..20 {
            let u = sampling::random_in_box(&mut rng, f.weights(), 0.5);
            let got = phi_grouped(&f, &integ, &partition, &u).unwrap();
            // three closed-form flows composed by hand
            let want = [u[0], u[1], u[2] + 0.5 * u[0] * u[1]];
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn single_group_partition_collapses_to_theta1() {
        let f = heisenberg();
        let integ = FlowIntegrator::default();
        let u = [0.3, 0.2, -0.1];
        let grouped = phi_grouped(&f, &integ, &[vec![1, 2, 3]], &u).unwrap();
        let first = theta1(&f, &integ, &u).unwrap();
        assert_eq!(grouped, first);
        let p = phi_grouped(&f, &integ, &singleton_partition(3), &[0.0; 3]).unwrap();
        assert_eq!(p, f.base_point());
    }

    #[test]
    fn bad_partitions_are_rejected() {
        let f = heisenberg();
        let integ = FlowIntegrator::default();
        let u = [0.1, 0.1, 0.1];
        for bad in [
            vec![vec![1, 2]],                 // missing 3
            vec![vec![1, 2], vec![2, 3]],     // repeated 2
            vec![vec![1, 2, 3, 4]],           // out of range
        ] {
            assert!(matches!(
                phi_grouped(&f, &integ, &bad, &u),
                Err(Error::BadPartition { .. })
            ));
        }
    }

    #[test]
    fn curve_pair_trivial_cases() {
        let f = heisenberg();
        let integ = FlowIntegrator::default();
        let controls = vec![
            ControlSegment {
                t0: 0.0,
                t1: 0.5,
                b: vec![0.2, -0.1, 0.0],
            },
            ControlSegment {
                t0: 0.5,
                t1: 1.0,
                b: vec![-0.1, 0.3, 0.1],
            },
        ];
        let (a, b) = curve_pair(&f, &f, &integ, &controls, &[0.0; 3]).unwrap();
        assert_eq!(a, b);

        let zero = vec![ControlSegment {
            t0: 0.0,
            t1: 1.0,
            b: vec![0.0; 3],
        }];
        let (a, b) = curve_pair(&f, &f, &integ, &zero, &[0.1, 0.0, 0.0]).unwrap();
        assert_eq!(a, vec![0.1, 0.0, 0.0]);
        assert_eq!(b, a);
    }

    #[test]
    fn escape_is_detected() {
        let f = WeightedFrame::new(
            vec![vec![e("1", 1)]],
            Weights::integers(&[1]).unwrap(),
            vec![0.0],
            1.0,
        )
        .unwrap();
        let integ = FlowIntegrator::default();
        assert!(matches!(
            exp_map(&f, &integ, &[10.0], &[0.0]),
            Err(Error::TrajectoryEscape { .. })
        ));
    }
}
