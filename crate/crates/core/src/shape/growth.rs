use serde::Serialize;

use super::ShapeError;
use crate::mc::{discounted_sup_profile, McError, McSettings};
use crate::model::{ProblemSpec, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthVerdict {
    Holds,
    Fails,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthRow {
    pub t: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// Mean discounted payoff at the horizon, added to each estimate.
    pub tail_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub verdict: GrowthVerdict,
    pub reason: String,
    /// Numeric bound on `|g|` when the payoff looks bounded.
    pub payoff_bound: Option<f64>,
    pub x: f64,
    pub rows: Vec<GrowthRow>,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GrowthSettings {
    /// Start point; the interval anchor when `None`.
    pub x: Option<f64>,
    /// Increasing times within the horizon.
    pub times: Vec<f64>,
    pub mc: McSettings,
    /// Decay target at the last time, relative to the first estimate.
    pub epsilon: f64,
}

impl GrowthSettings {
    /// Ten times spread over the first half of the default horizon.
    pub fn for_problem(p: &ProblemSpec, n_paths: usize, seed: u64) -> GrowthSettings {
        let mc = McSettings {
            n_paths,
            seed,
            dt: 0.02,
            ..Default::default()
        };
        let half = 0.5 * mc.horizon_for(p.beta);
        GrowthSettings {
            x: None,
            times: (0..10).map(|i| half * i as f64 / 9.0).collect(),
            mc,
            epsilon: 1e-2,
        }
    }
}

/// `max |g|` when the payoff stops growing over the last three of twelve
/// decades toward every infinite endpoint, `None` otherwise.
pub fn payoff_bound(p: &ProblemSpec) -> Option<f64> {
    let iv = p.interval();
    let c = iv.anchor();
    let scale = iv.length_scale();
    let g = |x: f64| p.payoff_at(x).ok().map(f64::abs);
    let mut near = 0.0f64;
    for x in iv.probe_points(PROBE) {
        near = near.max(g(x)?);
    }
    let mut far = 0.0f64;
    for side in [Side::Left, Side::Right] {
        let e = iv.endpoint(side);
        let sign = if side == Side::Left { -1.0 } else { 1.0 };
        for k in 1..=12 {
            let d = 10f64.powi(k);
            let x = if e.is_finite() {
                // Approach finite endpoints geometrically.
                e - sign * (e - c).abs() / d
            } else if iv.lo() == 0.0 && side == Side::Left {
                c / d
            } else {
                c + sign * scale * d
            };
            if !iv.contains_closed(x) {
                continue;
            }
            let v = g(x)?;
            if k <= 9 {
                near = near.max(v);
            } else {
                far = far.max(v);
            }
        }
    }
    (far <= near * (1.0 + 1e-3)).then_some(near.max(far))
}

const PROBE: usize = 257;

pub fn growth_condition_check(p: &ProblemSpec, times: &[f64], n_paths: usize, seed: u64) -> Result<GrowthReport, ShapeError> {
    let mut s = GrowthSettings::for_problem(p, n_paths, seed);
    s.times = times.to_vec();
    growth_condition_check_with(p, &s)
}

/// Monte Carlo decay table for `E[sup_{u >= t} e^{-beta u} g(X_u)]`.
///
/// Bounded payoffs hold without simulation. Otherwise the estimates plus
/// the horizon tail must fall below `epsilon` times the first estimate;
/// non-finite payoffs along the paths, or a tail that does not separate from
/// the estimates, are inconclusive, and estimates that fail to decrease fail.
pub fn growth_condition_check_with(p: &ProblemSpec, s: &GrowthSettings) -> Result<GrowthReport, ShapeError> {
    let x = s.x.unwrap_or_else(|| p.interval().anchor());
    let mut report = GrowthReport {
        verdict: GrowthVerdict::Inconclusive,
        reason: String::new(),
        payoff_bound: payoff_bound(p),
        x,
        rows: Vec::new(),
        n_paths: s.mc.n_paths,
        seed: s.mc.seed,
    };
    if let Some(b) = report.payoff_bound {
        report.verdict = GrowthVerdict::Holds;
        report.reason = format!("payoff bounded by {b}");
        return Ok(report);
    }
    if s.times.len() < 2 {
        return Err(ShapeError::Settings("at least two times are needed".into()));
    }
    let profile = match discounted_sup_profile(p, x, &s.times, &s.mc) {
        Ok(v) => v,
        Err(e @ (McError::NonFinite { .. } | McError::Eval(_))) => {
            report.reason = format!("simulation left the finite range: {e}");
            return Ok(report);
        }
        Err(e) => return Err(e.into()),
    };
    report.rows = s
        .times
        .iter()
        .zip(&profile)
        .map(|(&t, e)| GrowthRow {
            t,
            estimate: e.mean,
            std_error: e.std_error,
            tail_bound: e.bias_bound,
        })
        .collect();
    let first = &report.rows[0];
    let last = report.rows.last().unwrap();
    let start = first.estimate + first.tail_bound;
    let end = last.estimate + last.tail_bound;
    if !start.is_finite() || !end.is_finite() || report.rows.iter().any(|r| !r.std_error.is_finite()) {
        report.reason = "estimates are not finite".into();
        return Ok(report);
    }
    let target = s.epsilon * start;
    if last.tail_bound > target {
        report.reason = format!("horizon tail {:e} exceeds the decay target {target:e}", last.tail_bound);
        if end >= start {
            report.verdict = GrowthVerdict::Fails;
        }
        return Ok(report);
    }
    if end <= target + 3.0 * last.std_error {
        report.verdict = GrowthVerdict::Holds;
        report.reason = format!("decays from {start:e} to {end:e}");
    } else if end >= 0.5 * start {
        report.verdict = GrowthVerdict::Fails;
        report.reason = format!("no decay: {start:e} to {end:e}");
    } else {
        report.reason = format!("partial decay: {start:e} to {end:e}, target {target:e}");
    }
    Ok(report)
}
