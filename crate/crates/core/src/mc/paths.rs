use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::model::{Builtin, Diffusion, EndpointKind, EvalError, ScalarFunction};

use super::{per_path, stream, McError, Purpose};

/// Step rule chosen from the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepScheme {
    /// Constant coefficients: Gaussian increments, exact in law.
    Brownian { mu: f64, sigma: f64 },
    /// `vol = sigma x`, `drift = mu x` on `(0, inf)`: exact log-normal steps.
    Geometric { mu: f64, sigma: f64 },
    Euler,
}

fn linear_through_origin(f: &ScalarFunction) -> Option<f64> {
    match f {
        ScalarFunction::Builtin(Builtin::Linear { slope, intercept }) if *intercept == 0.0 => Some(*slope),
        _ => None,
    }
}

pub(crate) enum Move {
    Inside(f64),
    /// Hit an absorbing endpoint a fraction `frac` of the way through the step.
    Absorbed { at: f64, frac: f64 },
}

pub(crate) struct Stepper<'a> {
    d: &'a Diffusion,
    pub scheme: StepScheme,
    lo: f64,
    hi: f64,
    absorbing: [bool; 2],
}

impl<'a> Stepper<'a> {
    pub fn new(d: &'a Diffusion) -> Stepper<'a> {
        let iv = &d.interval;
        let scheme = match (d.vol.as_constant(), d.drift.as_constant()) {
            (Some(sigma), Some(mu)) => StepScheme::Brownian { mu, sigma },
            _ => match (linear_through_origin(&d.vol), linear_through_origin(&d.drift)) {
                (Some(sigma), Some(mu)) if iv.lo() == 0.0 && iv.hi() == f64::INFINITY => StepScheme::Geometric {
                    mu,
                    sigma: sigma.abs(),
                },
                _ => StepScheme::Euler,
            },
        };
        Stepper {
            d,
            scheme,
            lo: iv.lo(),
            hi: iv.hi(),
            absorbing: [
                iv.left_kind == EndpointKind::Absorbing && iv.lo().is_finite(),
                iv.right_kind == EndpointKind::Absorbing && iv.hi().is_finite(),
            ],
        }
    }

    fn propose(&self, x: f64, dt: f64, z: f64) -> Result<f64, EvalError> {
        Ok(match self.scheme {
            StepScheme::Brownian { mu, sigma } => x + mu * dt + sigma * dt.sqrt() * z,
            StepScheme::Geometric { mu, sigma } => x * ((mu - 0.5 * sigma * sigma) * dt + sigma * dt.sqrt() * z).exp(),
            StepScheme::Euler => x + self.d.drift.eval(x)? * dt + self.d.vol.eval(x)? * dt.sqrt() * z,
        })
    }

    /// One step from `x`; a non-finite proposal comes back as `Inside(NaN)`.
    pub fn advance(&self, x: f64, dt: f64, z: f64) -> Result<Move, EvalError> {
        let y = self.propose(x, dt, z)?;
        if !y.is_finite() {
            return Ok(Move::Inside(f64::NAN));
        }
        let crossing = |e: f64| if x == y { 0.0 } else { ((x - e) / (x - y)).clamp(0.0, 1.0) };
        if self.absorbing[0] && y <= self.lo {
            return Ok(Move::Absorbed {
                at: self.lo,
                frac: crossing(self.lo),
            });
        }
        if self.absorbing[1] && y >= self.hi {
            return Ok(Move::Absorbed {
                at: self.hi,
                frac: crossing(self.hi),
            });
        }
        Ok(Move::Inside(y.clamp(self.lo, self.hi)))
    }

    /// State a fraction `frac` into a step of length `span` from `x0` to `x1`.
    pub fn bridge(&self, x0: f64, x1: f64, frac: f64, span: f64, z: f64) -> Result<f64, EvalError> {
        let spread = (frac * (1.0 - frac) * span).max(0.0).sqrt();
        let x = match self.scheme {
            StepScheme::Geometric { sigma, .. } if x0 > 0.0 && x1 > 0.0 => {
                (x0.ln() + frac * (x1.ln() - x0.ln()) + sigma * spread * z).exp()
            }
            StepScheme::Brownian { sigma, .. } => x0 + frac * (x1 - x0) + sigma * spread * z,
            _ => x0 + frac * (x1 - x0) + self.d.vol.eval(x0)? * spread * z,
        };
        Ok(x.clamp(self.lo, self.hi))
    }
}

/// Stored paths on a uniform time grid.
#[derive(Debug, Clone, Serialize)]
pub struct PathBundle {
    pub dt: f64,
    pub steps: usize,
    pub scheme: StepScheme,
    pub paths: Vec<Vec<f64>>,
    /// First step index at which the path sits on an absorbing endpoint.
    pub absorbed: Vec<Option<usize>>,
    pub seed: u64,
    /// Stream id of each path's driving noise.
    pub streams: Vec<u64>,
}

impl PathBundle {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        &self.paths[i]
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// States of all paths at step `k`.
    pub fn at_step(&self, k: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p[k]).collect()
    }
}

fn check_inputs(d: &Diffusion, x0: f64, dt: f64, horizon: f64, n_paths: usize) -> Result<usize, McError> {
    if !(dt > 0.0 && dt.is_finite() && horizon > 0.0 && horizon.is_finite()) {
        return Err(McError::Settings(format!("need dt > 0 and horizon > 0, got {dt}, {horizon}")));
    }
    if n_paths == 0 {
        return Err(McError::Settings("need at least one path".into()));
    }
    if !d.interval.contains_closed(x0) {
        return Err(McError::Settings(format!("start {x0} lies outside the interval")));
    }
    Ok((horizon / dt).ceil() as usize)
}

struct Trace {
    states: Vec<f64>,
    absorbed: Option<usize>,
}

fn trace(stepper: &Stepper, x0: f64, dt: f64, steps: usize, path: usize, rng: &mut impl Rng) -> Result<Trace, McError> {
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0);
    let mut x = x0;
    let mut absorbed = None;
    for k in 0..steps {
        if absorbed.is_none() {
            let z: f64 = rng.sample(StandardNormal);
            match stepper.advance(x, dt, z)? {
                Move::Inside(y) if !y.is_finite() => return Err(McError::NonFinite { path, step: k + 1 }),
                Move::Inside(y) => x = y,
                Move::Absorbed { at, .. } => {
                    x = at;
                    absorbed = Some(k + 1);
                }
            }
        }
        states.push(x);
    }
    Ok(Trace { states, absorbed })
}

/// Simulates `n_paths` independent paths from `x0`.
pub fn simulate_paths(d: &Diffusion, x0: f64, dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Result<PathBundle, McError> {
    let steps = check_inputs(d, x0, dt, horizon, n_paths)?;
    let stepper = Stepper::new(d);
    let traces = per_path(n_paths, |i| trace(&stepper, x0, dt, steps, i, &mut stream(seed, i, Purpose::Noise)));
    let mut paths = Vec::with_capacity(n_paths);
    let mut absorbed = Vec::with_capacity(n_paths);
    for t in traces {
        let t = t?;
        paths.push(t.states);
        absorbed.push(t.absorbed);
    }
    Ok(PathBundle {
        dt,
        steps,
        scheme: stepper.scheme,
        paths,
        absorbed,
        seed,
        streams: (0..n_paths).map(|i| i as u64 * 8 + Purpose::Noise as u64).collect(),
    })
}

/// Paired paths from `x <= y`: independent noise until the upper path first
/// reaches or crosses the lower one, identical afterwards.
#[derive(Debug, Clone, Serialize)]
pub struct CoupledPaths {
    pub lower: PathBundle,
    pub upper: PathBundle,
    /// Step at which each pair merged.
    pub meeting: Vec<Option<usize>>,
}

pub fn doeblin_couple(
    d: &Diffusion,
    x: f64,
    y: f64,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<CoupledPaths, McError> {
    if x > y {
        return Err(McError::Settings(format!("coupling needs x <= y, got {x} > {y}")));
    }
    let steps = check_inputs(d, x, dt, horizon, n_paths)?;
    check_inputs(d, y, dt, horizon, n_paths)?;
    let stepper = Stepper::new(d);
    let pairs = per_path(n_paths, |i| -> Result<(Trace, Trace, Option<usize>), McError> {
        let lower = trace(&stepper, x, dt, steps, i, &mut stream(seed, i, Purpose::Noise))?;
        if x == y {
            let upper = Trace {
                states: lower.states.clone(),
                absorbed: lower.absorbed,
            };
            return Ok((lower, upper, Some(0)));
        }
        let mut rng = stream(seed, i, Purpose::PartnerNoise);
        let mut states = Vec::with_capacity(steps + 1);
        states.push(y);
        let mut u = y;
        let mut absorbed = None;
        let mut meeting = None;
        for k in 0..steps {
            if meeting.is_some() {
                states.push(lower.states[k + 1]);
                continue;
            }
            if absorbed.is_none() {
                let z: f64 = rng.sample(StandardNormal);
                match stepper.advance(u, dt, z)? {
                    Move::Inside(v) if !v.is_finite() => return Err(McError::NonFinite { path: i, step: k + 1 }),
                    Move::Inside(v) => u = v,
                    Move::Absorbed { at, .. } => {
                        u = at;
                        absorbed = Some(k + 1);
                    }
                }
            }
            if u <= lower.states[k + 1] {
                meeting = Some(k + 1);
                states.push(lower.states[k + 1]);
            } else {
                states.push(u);
            }
        }
        let absorbed = match meeting {
            Some(m) => absorbed.or(lower.absorbed.map(|a| a.max(m))),
            None => absorbed,
        };
        Ok((lower, Trace { states, absorbed }, meeting))
    });
    let mut lo = Vec::with_capacity(n_paths);
    let mut hi = Vec::with_capacity(n_paths);
    let mut meeting = Vec::with_capacity(n_paths);
    for r in pairs {
        let (l, h, m) = r?;
        lo.push(l);
        hi.push(h);
        meeting.push(m);
    }
    let bundle = |traces: Vec<Trace>, purpose: Purpose| {
        let streams = (0..n_paths).map(|i| i as u64 * 8 + purpose as u64).collect();
        let (paths, absorbed) = traces.into_iter().map(|t| (t.states, t.absorbed)).unzip();
        PathBundle {
            dt,
            steps,
            scheme: stepper.scheme,
            paths,
            absorbed,
            seed,
            streams,
        }
    };
    Ok(CoupledPaths {
        lower: bundle(lo, Purpose::Noise),
        upper: bundle(hi, Purpose::PartnerNoise),
        meeting,
    })
}
