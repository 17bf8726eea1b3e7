//! Verdict machinery for scaling-limit experiments.
//!
//! Every limit in this crate is probed along a geometric schedule
//! `eps_n = eps0 * ratio^n` and the resulting sample sequences are
//! classified by their tails:
//!
//! * `Converged` — the last few increments are below tolerance for every
//!   sample (the limits here must be uniform, so one straggler blocks the
//!   verdict);
//! * `Diverged` — some sample's tail oscillates above the divergence
//!   amplitude with no monotone trend, or blows up;
//! * `Inconclusive` — anything else, including evaluation failures.
//!
//! The thresholds live in one policy value shared by the quasimetric,
//! field-limit and transition checks.

use serde::{Deserialize, Serialize};

/// Geometric schedule `eps_n = eps0 * ratio^n`, `n = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub eps0: f64,
    pub ratio: f64,
    pub count: usize,
}

impl Schedule {
    pub fn new(eps0: f64, ratio: f64, count: usize) -> Self {
        assert!(eps0 > 0.0 && ratio > 0.0 && ratio < 1.0 && count >= 2);
        Schedule { eps0, ratio, count }
    }

    /// Default for quasimetric cones: `2^0 .. 2^-20`.
    pub fn cone_default() -> Self {
        Schedule::new(1.0, 0.5, 21)
    }

    /// Default for map/Jacobian/field limits: `2^0 .. 2^-26`. Deeper than
    /// the cone schedule so that residual tails one weight above the target
    /// degree clear the convergence window.
    pub fn limit_default() -> Self {
        Schedule::new(1.0, 0.5, 27)
    }

    pub fn epsilons(&self) -> Vec<f64> {
        let mut eps = self.eps0;
        (0..self.count)
            .map(|_| {
                let e = eps;
                eps *= self.ratio;
                e
            })
            .collect()
    }
}

/// Shared thresholds for tail classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TolerancePolicy {
    /// Relative Cauchy tolerance for `Converged`.
    pub convergence_tol: f64,
    /// Absolute tail amplitude that flags oscillatory divergence.
    pub divergence_amplitude: f64,
    /// Number of trailing increments that must sit below tolerance.
    pub convergence_window: usize,
    /// Number of trailing values inspected for oscillation.
    pub divergence_window: usize,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        TolerancePolicy {
            convergence_tol: 1e-6,
            divergence_amplitude: 1e-2,
            convergence_window: 4,
            divergence_window: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Converged,
    Diverged,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Converged => "converged",
            Verdict::Diverged => "diverged",
            Verdict::Inconclusive => "inconclusive",
        };
        f.write_str(s)
    }
}

/// One sample's probe along the schedule. `None` marks an evaluation
/// failure at that step (recorded, never silently dropped).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleTrace {
    pub values: Vec<Option<f64>>,
    pub verdict: Verdict,
    pub limit: Option<f64>,
    pub rate: Option<f64>,
    pub tail_amplitude: f64,
    pub note: String,
}

/// Classify one value sequence by its tail.
pub fn classify(values: &[Option<f64>], policy: &TolerancePolicy, ratio: f64) -> SampleTrace {
    let len = values.len();
    let dw = policy.divergence_window.min(len);
    let tail = &values[len - dw..];

    if tail.iter().any(|v| v.is_none()) {
        return SampleTrace {
            values: values.to_vec(),
            verdict: Verdict::Inconclusive,
            limit: None,
            rate: None,
            tail_amplitude: f64::NAN,
            note: "evaluation failure in the tail".to_string(),
        };
    }
    let tail: Vec<f64> = tail.iter().map(|v| v.unwrap()).collect();

    let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let amplitude = hi - lo;

    if tail.iter().any(|v| !v.is_finite()) || hi.abs().max(lo.abs()) > 1e12 {
        return SampleTrace {
            values: values.to_vec(),
            verdict: Verdict::Diverged,
            limit: None,
            rate: None,
            tail_amplitude: amplitude,
            note: "blow-up".to_string(),
        };
    }

    let diffs: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).collect();

    // Cauchy window: the last `convergence_window` increments all small.
    let cw = policy.convergence_window.min(diffs.len());
    let cauchy = diffs[diffs.len() - cw..].iter().enumerate().all(|(i, &d)| {
        let anchor = tail[tail.len() - cw + i].abs().max(1.0);
        d.abs() < policy.convergence_tol * anchor
    });
    if cauchy {
        let limit = *tail.last().unwrap();
        return SampleTrace {
            values: values.to_vec(),
            verdict: Verdict::Converged,
            limit: Some(limit),
            rate: rate_estimate(&diffs, ratio),
            tail_amplitude: amplitude,
            note: String::new(),
        };
    }

    if amplitude > policy.divergence_amplitude {
        let sign_changes = diffs
            .windows(2)
            .filter(|w| w[0] * w[1] < 0.0)
            .count();
        if sign_changes >= 1 {
            return SampleTrace {
                values: values.to_vec(),
                verdict: Verdict::Diverged,
                limit: None,
                rate: None,
                tail_amplitude: amplitude,
                note: format!("oscillation, amplitude {amplitude:.3e}"),
            };
        }
        // monotone with growing increments: running away, not settling
        if diffs.len() >= 2 && diffs.last().unwrap().abs() > 2.0 * diffs[0].abs() {
            return SampleTrace {
                values: values.to_vec(),
                verdict: Verdict::Diverged,
                limit: None,
                rate: None,
                tail_amplitude: amplitude,
                note: "monotone blow-up".to_string(),
            };
        }
    }

    SampleTrace {
        values: values.to_vec(),
        verdict: Verdict::Inconclusive,
        limit: None,
        rate: None,
        tail_amplitude: amplitude,
        note: "tail not settled".to_string(),
    }
}

/// Median decay order of the increments against the schedule ratio;
/// `None` when the tail is exact (increments at rounding level).
fn rate_estimate(diffs: &[f64], ratio: f64) -> Option<f64> {
    let take = diffs.len().min(6);
    let tail = &diffs[diffs.len() - take..];
    let mut rates: Vec<f64> = tail
        .windows(2)
        .filter(|w| w[0].abs() > 1e-300 && w[1].abs() > 1e-300)
        .map(|w| (w[0].abs() / w[1].abs()).ln() / (1.0 / ratio).ln())
        .filter(|r| r.is_finite())
        .collect();
    if rates.is_empty() {
        return None;
    }
    rates.sort_by(f64::total_cmp);
    Some(rates[rates.len() / 2])
}

/// Experiment-level outcome over many samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub epsilons: Vec<f64>,
    pub samples: Vec<SampleTrace>,
    pub verdict: Verdict,
    /// Index of the widest-swinging sample when diverged.
    pub worst_sample: Option<usize>,
}

impl ConvergenceReport {
    /// Uniformity rule: `Converged` only if every sample converged;
    /// `Diverged` as soon as one sample diverged.
    pub fn aggregate(epsilons: Vec<f64>, samples: Vec<SampleTrace>) -> Self {
        let verdict = if samples.iter().any(|s| s.verdict == Verdict::Diverged) {
            Verdict::Diverged
        } else if !samples.is_empty() && samples.iter().all(|s| s.verdict == Verdict::Converged) {
            Verdict::Converged
        } else {
            Verdict::Inconclusive
        };
        let worst_sample = if verdict == Verdict::Diverged {
            samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.verdict == Verdict::Diverged)
                .max_by(|a, b| a.1.tail_amplitude.total_cmp(&b.1.tail_amplitude))
                .map(|(i, _)| i)
        } else {
            None
        };
        ConvergenceReport {
            epsilons,
            samples,
            verdict,
            worst_sample,
        }
    }

    pub fn limits(&self) -> Vec<Option<f64>> {
        self.samples.iter().map(|s| s.limit).collect()
    }
}
