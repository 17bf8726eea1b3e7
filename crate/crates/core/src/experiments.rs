//! Cross-module experiments.

use crate::charts::{curve_pair, theta1_inv_with, ControlSegment, FlowIntegrator, NewtonOptions};
use crate::error::Result;
use crate::frames::WeightedFrame;
use crate::geometry::{eps_pow, quasinorm};
use serde::Serialize;

/// One curve-divergence run: endpoints of the original and approximating
/// dynamics under identical controls, and their box-quasimetric gap.
#[derive(Debug, Clone, Serialize)]
pub struct CurveDivergencePoint {
    pub eps: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveDivergenceResult {
    pub points: Vec<CurveDivergencePoint>,
    /// Log-log least-squares slope of distance against eps.
    pub slope: f64,
}

/// Drive both frames with base controls scaled per weight
/// (`b_i -> eps^{sigma_i} b_i`) and fit how fast the endpoint gap closes.
/// A slope above 1 certifies the gap is `o(eps)` at desk scale.
pub fn curve_divergence(
    frame: &WeightedFrame,
    approx: &WeightedFrame,
    base_controls: &[ControlSegment],
    epsilons: &[f64],
    integ: &FlowIntegrator,
) -> Result<CurveDivergenceResult> {
    let sigma = frame.weights();
    let start = frame.base_point().to_vec();
    // endpoint gaps shrink like powers of eps; the chart inversion must
    // resolve chart coordinates to far below the distances being compared
    let newton = NewtonOptions {
        residual_tol: 1e-14,
        max_iterations: 60,
        ..Default::default()
    };
    let mut points = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let scaled: Vec<ControlSegment> = base_controls
            .iter()
            .map(|seg| ControlSegment {
                t0: seg.t0,
                t1: seg.t1,
                b: seg
                    .b
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| eps_pow(eps, sigma.get(i)) * v)
                    .collect(),
            })
            .collect();
        let (endpoint, endpoint_hat) = curve_pair(frame, approx, integ, &scaled, &start)?;
        let u = theta1_inv_with(approx, integ, &endpoint, &endpoint_hat, &newton)?;
        let distance = quasinorm(&u, approx.weights());
        points.push(CurveDivergencePoint { eps, distance });
    }

    // least squares on (ln eps, ln d); zero distances clamp to roundoff
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.eps.ln(), p.distance.max(1e-300).ln()))
        .collect();
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|(x, _)| x).sum();
    let sy: f64 = logs.iter().map(|(_, y)| y).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = logs.iter().map(|(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);

    Ok(CurveDivergenceResult { points, slope })
}

/// Deterministic default controls: four segments with fixed coefficients
/// spread over the fields.
pub fn default_controls(dim: usize) -> Vec<ControlSegment> {
    let breaks = [0.0, 0.25, 0.5, 0.75, 1.0];
    // fixed table, cycled over fields and segments
    let table = [0.9, -0.6, 0.4, 0.75, -0.85, 0.3, -0.5, 0.65];
    (0..4)
        .map(|s| ControlSegment {
            t0: breaks[s],
            t1: breaks[s + 1],
            b: (0..dim).map(|i| table[(s * dim + i) % table.len()]).collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::geometry::Weights;

    #[test]
    fn identical_frames_give_zero_gap() {
        let e = |s: &str| parse(s, 3).unwrap();
        let f = WeightedFrame::new(
            vec![
                vec![e("1"), e("0"), e("-x2/2")],
                vec![e("0"), e("1"), e("x1/2")],
                vec![e("0"), e("0"), e("1")],
            ],
            Weights::integers(&[1, 1, 2]).unwrap(),
            vec![0.0; 3],
            1.0,
        )
        .unwrap();
        let integ = FlowIntegrator::default();
        let controls = default_controls(3);
        let eps: Vec<f64> = (2..=6).map(|n| 2f64.powi(-n)).collect();
        let res = curve_divergence(&f, &f, &controls, &eps, &integ).unwrap();
        for p in &res.points {
            assert!(p.distance < 1e-9, "{p:?}");
        }
    }
}
