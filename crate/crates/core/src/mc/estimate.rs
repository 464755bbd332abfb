use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::Serialize;

use crate::model::{validate_problem, Assumption, ProblemSpec, Status};
use crate::transform::time_change_coefficients;

use super::paths::{Move, Stepper};
use super::{mean_and_error, pairwise_sum, per_path, stream, McError, McSettings, Purpose};

/// Doublings of the intensity cap before giving up.
const MAX_CAP_RESTARTS: usize = 40;

#[derive(Debug, Clone, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    /// Paths with no decision by the horizon.
    pub unfinished: usize,
    /// Estimated discounted payoff still owed by the unfinished paths, per path.
    pub bias_bound: f64,
    /// Mark intensity used for thinning; zero for the time-changed estimator.
    pub intensity_cap: f64,
    pub cap_restarts: usize,
    pub flags: Vec<String>,
}

impl Estimate {
    fn from_values(values: &[f64], tail: &[f64], unfinished: usize, threshold: f64) -> Estimate {
        let (mean, std_error) = mean_and_error(values);
        let n = values.len();
        let mut flags = Vec::new();
        if unfinished as f64 > threshold * n as f64 {
            flags.push(format!("unfinished paths: {unfinished} of {n}"));
        }
        Estimate {
            mean,
            std_error,
            n_paths: n,
            unfinished,
            bias_bound: pairwise_sum(tail) / n as f64,
            intensity_cap: 0.0,
            cap_restarts: 0,
            flags,
        }
    }

    /// `k` standard errors plus the horizon bias bound.
    pub fn error_budget(&self, k: f64) -> f64 {
        k * self.std_error + self.bias_bound
    }
}

/// Direct and time-changed estimates of the first-arrival value.
#[derive(Debug, Clone, Serialize)]
pub struct GEstimate {
    pub direct: Estimate,
    pub time_changed: Estimate,
}

impl GEstimate {
    pub fn combined_error(&self) -> f64 {
        self.direct.std_error.hypot(self.time_changed.std_error)
    }

    /// Means agree within `k` combined standard errors.
    pub fn agree(&self, k: f64) -> bool {
        (self.direct.mean - self.time_changed.mean).abs() <= k * self.combined_error()
    }
}

enum Outcome {
    Stopped { t: f64, x: f64 },
    Absorbed { t: f64, at: f64 },
    Unfinished { x: f64 },
}

struct Walk<'a> {
    p: &'a ProblemSpec,
    stepper: Stepper<'a>,
    dt: f64,
    steps: usize,
    z_max: f64,
    seed: u64,
}

impl Walk<'_> {
    /// Follows path `i` until the first event at which `stop` holds.
    fn run(&self, i: usize, x0: f64, stop: &(dyn Fn(f64) -> bool + Sync)) -> Result<Outcome, McError> {
        let mut noise = stream(self.seed, i, Purpose::Noise);
        let mut marks = stream(self.seed, i, Purpose::Marks);
        let mut bridge = stream(self.seed, i, Purpose::Bridge);
        let gap = |rng: &mut rand_chacha::ChaCha8Rng| rng.sample::<f64, _>(Exp1) / self.z_max;
        let mut next = gap(&mut marks);
        let mut x = x0;
        for k in 0..self.steps {
            let t0 = k as f64 * self.dt;
            let rate = self.p.rate_at(x)?;
            if rate.is_infinite() {
                if stop(x) {
                    return Ok(Outcome::Stopped { t: t0, x });
                }
            } else if rate > self.z_max {
                return Err(McError::IntensityCapExceeded {
                    path: i,
                    time: t0,
                    rate,
                    cap: self.z_max,
                });
            }
            let z: f64 = noise.sample(StandardNormal);
            let (x1, span, absorbed) = match self.stepper.advance(x, self.dt, z)? {
                Move::Inside(y) if !y.is_finite() => return Err(McError::NonFinite { path: i, step: k + 1 }),
                Move::Inside(y) => (y, self.dt, None),
                Move::Absorbed { at, frac } => (at, frac * self.dt, Some(at)),
            };
            let t1 = t0 + span;
            while next < t1 {
                let mark: f64 = marks.gen::<f64>() * self.z_max;
                if rate.is_finite() && mark < rate {
                    let xe = self
                        .stepper
                        .bridge(x, x1, (next - t0) / span, span, bridge.sample(StandardNormal))?;
                    if stop(xe) {
                        return Ok(Outcome::Stopped { t: next, x: xe });
                    }
                }
                next += gap(&mut marks);
            }
            if let Some(at) = absorbed {
                return Ok(Outcome::Absorbed { t: t1, at });
            }
            x = x1;
        }
        Ok(Outcome::Unfinished { x })
    }
}

fn require_rate_assumption(p: &ProblemSpec, s: &McSettings) -> Result<(), McError> {
    if !s.validate {
        return Ok(());
    }
    let report = validate_problem(p);
    for which in [Assumption::Coefficients, Assumption::Rate] {
        if report.status(which) == Status::Fail {
            let detail: Vec<String> = report
                .failures()
                .filter(|f| f.assumption == which)
                .map(|f| format!("{}: {}", f.check, f.detail))
                .collect();
            return Err(McError::Assumptions(detail.join("; ")));
        }
    }
    Ok(())
}

fn check_start(p: &ProblemSpec, x: f64) -> Result<(), McError> {
    if p.interval().contains_closed(x) {
        Ok(())
    } else {
        Err(McError::Settings(format!("start {x} lies outside the interval")))
    }
}

/// Discounted payoff at the first event with `stop(X) = true`.
fn stopping_value(
    p: &ProblemSpec,
    x: f64,
    s: &McSettings,
    stop: &(dyn Fn(f64) -> bool + Sync),
) -> Result<Estimate, McError> {
    s.check()?;
    check_start(p, x)?;
    let horizon = s.horizon_for(p.beta);
    let steps = (horizon / s.dt).ceil() as usize;
    let r0 = p.rate_at(x)?;
    let mut walk = Walk {
        p,
        stepper: Stepper::new(&p.diffusion),
        dt: s.dt,
        steps,
        z_max: 2.0 * if r0.is_finite() { r0.max(p.beta) } else { p.beta },
        seed: s.seed,
    };
    let mut restarts = 0;
    let outcomes = loop {
        let results = per_path(s.n_paths, |i| walk.run(i, x, stop));
        let needed = results
            .iter()
            .filter_map(|r| match r {
                Err(McError::IntensityCapExceeded { rate, .. }) => Some(*rate),
                _ => None,
            })
            .fold(0.0, f64::max);
        if needed > 0.0 {
            restarts += 1;
            if restarts > MAX_CAP_RESTARTS {
                return Err(McError::CapRunaway(restarts - 1));
            }
            walk.z_max = (2.0 * walk.z_max).max(1.25 * needed);
            continue;
        }
        break results.into_iter().collect::<Result<Vec<_>, _>>()?;
    };
    let discount_h = (-p.beta * steps as f64 * s.dt).exp();
    let mut values = Vec::with_capacity(outcomes.len());
    let mut tail = Vec::with_capacity(outcomes.len());
    let mut unfinished = 0;
    for o in outcomes {
        let (v, b) = match o {
            Outcome::Stopped { t, x } => ((-p.beta * t).exp() * p.payoff_at(x)?, 0.0),
            Outcome::Absorbed { t, at } if stop(at) => ((-p.beta * t).exp() * p.psi(at)?, 0.0),
            Outcome::Absorbed { .. } => (0.0, 0.0),
            Outcome::Unfinished { x } => {
                unfinished += 1;
                (0.0, discount_h * p.payoff_at(x)?)
            }
        };
        values.push(v);
        tail.push(b);
    }
    let mut est = Estimate::from_values(&values, &tail, unfinished, s.unfinished_threshold);
    est.intensity_cap = walk.z_max;
    est.cap_restarts = restarts;
    if restarts > 0 {
        est.flags.push(format!("intensity cap enlarged {restarts} times to {}", walk.z_max));
    }
    Ok(est)
}

/// Time-changed estimator: `E[Psi(Y_T)]` with `T` a unit exponential.
///
/// `Y` runs on its own clock, in steps of `dt`, up to `beta * horizon`.
fn time_changed_value(p: &ProblemSpec, x: f64, s: &McSettings) -> Result<Estimate, McError> {
    let y = time_change_coefficients(p);
    let stepper = Stepper::new(&y);
    let horizon = p.beta * s.horizon_for(p.beta);
    let results = per_path(s.n_paths, |i| -> Result<(f64, f64, bool), McError> {
        let mut noise = stream(s.seed, i, Purpose::Noise);
        let clock: f64 = stream(s.seed, i, Purpose::Clock).sample(Exp1);
        let end = clock.min(horizon);
        let mut t = 0.0;
        let mut u = x;
        let mut k = 0;
        while t < end {
            let dt = s.dt.min(end - t);
            match stepper.advance(u, dt, noise.sample(StandardNormal))? {
                Move::Inside(v) if !v.is_finite() => return Err(McError::NonFinite { path: i, step: k + 1 }),
                Move::Inside(v) => u = v,
                Move::Absorbed { at, .. } => return Ok((p.psi(at)?, 0.0, false)),
            }
            t += dt;
            k += 1;
        }
        if clock > horizon {
            Ok((0.0, (-horizon).exp() * p.psi(u)?, true))
        } else {
            Ok((p.psi(u)?, 0.0, false))
        }
    });
    let mut values = Vec::with_capacity(s.n_paths);
    let mut tail = Vec::with_capacity(s.n_paths);
    let mut unfinished = 0;
    for r in results {
        let (v, b, open) = r?;
        values.push(v);
        tail.push(b);
        unfinished += open as usize;
    }
    Ok(Estimate::from_values(&values, &tail, unfinished, s.unfinished_threshold))
}

/// First-arrival value `E[e^{-beta T_1} g(X_{T_1})]` estimated directly,
/// by thinning marks against `theta(X)`, and through the time change.
pub fn estimate_g(p: &ProblemSpec, x: f64, s: &McSettings) -> Result<GEstimate, McError> {
    require_rate_assumption(p, s)?;
    let direct = stopping_value(p, x, s, &|_| true)?;
    let time_changed = time_changed_value(p, x, s)?;
    Ok(GEstimate { direct, time_changed })
}

/// Value of stopping at the first event with `X >= threshold`.
pub fn evaluate_policy(p: &ProblemSpec, threshold: f64, x: f64, s: &McSettings) -> Result<Estimate, McError> {
    require_rate_assumption(p, s)?;
    if !p.interval().contains_closed(threshold) {
        return Err(McError::Settings(format!("threshold {threshold} lies outside the interval")));
    }
    stopping_value(p, x, s, &move |y| y >= threshold)
}

/// Estimates of `E[sup_{u >= t} e^{-beta u} g(X_u)]` for each `t` in
/// `times`, the supremum taken over the simulated horizon. Each `bias_bound`
/// is the mean discounted payoff at the horizon.
pub fn discounted_sup_profile(p: &ProblemSpec, x: f64, times: &[f64], s: &McSettings) -> Result<Vec<Estimate>, McError> {
    s.check()?;
    check_start(p, x)?;
    let horizon = s.horizon_for(p.beta);
    if times.iter().any(|&t| !(0.0..=horizon).contains(&t)) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(McError::Settings("times must be increasing and within the horizon".into()));
    }
    let steps = (horizon / s.dt).ceil() as usize;
    let starts: Vec<usize> = times.iter().map(|&t| ((t / s.dt).ceil() as usize).min(steps)).collect();
    let stepper = Stepper::new(&p.diffusion);
    let m = times.len();
    let rows = per_path(s.n_paths, |i| -> Result<(Vec<f64>, f64), McError> {
        let mut noise = stream(s.seed, i, Purpose::Noise);
        let mut block = vec![f64::NEG_INFINITY; m];
        let mut tail = 0.0;
        let mut x = x;
        let mut j = 0;
        for k in 0..=steps {
            while j + 1 < m && k >= starts[j + 1] {
                j += 1;
            }
            if k >= starts[0] {
                let d = (-p.beta * k as f64 * s.dt).exp() * p.payoff_at(x)?;
                block[j] = block[j].max(d);
                tail = d;
            }
            if k == steps {
                break;
            }
            match stepper.advance(x, s.dt, noise.sample(StandardNormal))? {
                Move::Inside(v) if !v.is_finite() => return Err(McError::NonFinite { path: i, step: k + 1 }),
                Move::Inside(v) | Move::Absorbed { at: v, .. } => x = v,
            }
        }
        for j in (0..m.saturating_sub(1)).rev() {
            block[j] = block[j].max(block[j + 1]);
        }
        Ok((block, tail))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let tails: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok((0..m)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r.0[j]).collect();
            Estimate::from_values(&col, &tails, 0, s.unfinished_threshold)
        })
        .collect())
}
