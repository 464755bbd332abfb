use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::function::{cap_infinite, EvalError, ExtReal, ScalarFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Absorbing,
    Natural,
    Entrance,
    #[default]
    Unclassified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("interval requires left < right, got [{left}, {right}]")]
    EmptyInterval { left: f64, right: f64 },
    #[error("infinite endpoint {value} cannot be absorbing")]
    InfiniteAbsorbing { value: f64 },
    #[error("discount beta must be positive and finite, got {0}")]
    Beta(f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("problem file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// State interval with endpoint kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub left: ExtReal,
    pub right: ExtReal,
    #[serde(default)]
    pub left_kind: EndpointKind,
    #[serde(default)]
    pub right_kind: EndpointKind,
}

impl Interval {
    pub fn new(left: f64, right: f64) -> Result<Self, ModelError> {
        Self::with_kinds(left, right, EndpointKind::Unclassified, EndpointKind::Unclassified)
    }

    pub fn with_kinds(
        left: f64,
        right: f64,
        left_kind: EndpointKind,
        right_kind: EndpointKind,
    ) -> Result<Self, ModelError> {
        let iv = Interval {
            left: ExtReal(left),
            right: ExtReal(right),
            left_kind,
            right_kind,
        };
        iv.check()?;
        Ok(iv)
    }

    pub fn real_line() -> Self {
        Self::with_kinds(f64::NEG_INFINITY, f64::INFINITY, EndpointKind::Natural, EndpointKind::Natural)
            .unwrap()
    }

    pub fn positive_half_line(left_kind: EndpointKind) -> Self {
        Self::with_kinds(0.0, f64::INFINITY, left_kind, EndpointKind::Natural).unwrap()
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let (l, r) = (self.left.0, self.right.0);
        if !(l < r) {
            return Err(ModelError::EmptyInterval { left: l, right: r });
        }
        for (v, k) in [(l, self.left_kind), (r, self.right_kind)] {
            if v.is_infinite() && k == EndpointKind::Absorbing {
                return Err(ModelError::InfiniteAbsorbing { value: v });
            }
        }
        Ok(())
    }

    pub fn lo(&self) -> f64 {
        self.left.0
    }

    pub fn hi(&self) -> f64 {
        self.right.0
    }

    pub fn endpoint(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.left.0,
            Side::Right => self.right.0,
        }
    }

    pub fn kind(&self, side: Side) -> EndpointKind {
        match side {
            Side::Left => self.left_kind,
            Side::Right => self.right_kind,
        }
    }

    pub fn set_kind(&mut self, side: Side, kind: EndpointKind) {
        match side {
            Side::Left => self.left_kind = kind,
            Side::Right => self.right_kind = kind,
        }
    }

    /// Membership in the state space: open interior plus absorbing endpoints.
    pub fn contains(&self, x: f64) -> bool {
        (x > self.lo() && x < self.hi())
            || (x == self.lo() && self.left_kind == EndpointKind::Absorbing)
            || (x == self.hi() && self.right_kind == EndpointKind::Absorbing)
    }

    /// Membership in the closure.
    pub fn contains_closed(&self, x: f64) -> bool {
        x >= self.lo() && x <= self.hi() && x.is_finite()
    }

    pub fn is_finite(&self) -> bool {
        self.lo().is_finite() && self.hi().is_finite()
    }

    /// Default reference point: the midpoint of a bounded interval, one unit
    /// inside a half line (so 1 for `(0, inf)`), zero for the real line.
    pub fn anchor(&self) -> f64 {
        match (self.lo().is_finite(), self.hi().is_finite()) {
            (true, true) => 0.5 * (self.lo() + self.hi()),
            (true, false) => self.lo() + 1.0,
            (false, true) => self.hi() - 1.0,
            (false, false) => 0.0,
        }
    }

    /// Unit of length used to scale probes and tolerances.
    pub fn length_scale(&self) -> f64 {
        if self.is_finite() {
            self.hi() - self.lo()
        } else {
            1.0f64.max(self.anchor().abs())
        }
    }

    /// Compact sub-interval used for interior probes: a short distance inside
    /// finite endpoints, and a wide window around the anchor for infinite ones.
    pub fn probe_bounds(&self) -> (f64, f64) {
        let c = self.anchor();
        let scale = self.length_scale();
        let lo = if self.lo().is_finite() {
            self.lo() + 1e-3 * (c - self.lo())
        } else {
            c - 100.0 * scale
        };
        let hi = if self.hi().is_finite() {
            self.hi() - 1e-3 * (self.hi() - c)
        } else {
            c + 100.0 * scale
        };
        (lo, hi)
    }

    /// `n` probe points between `probe_bounds`, including absorbing endpoints.
    /// Spacing is geometric for `(0, inf)`-type intervals and uniform otherwise.
    pub fn probe_points(&self, n: usize) -> Vec<f64> {
        let (mut lo, mut hi) = self.probe_bounds();
        let geometric = self.lo() == 0.0 && !self.hi().is_finite() && self.left_kind != EndpointKind::Absorbing;
        if geometric {
            lo = 1e-2;
            hi = 1e2;
        }
        let mut pts: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                if geometric {
                    (lo.ln() + t * (hi.ln() - lo.ln())).exp()
                } else {
                    lo + t * (hi - lo)
                }
            })
            .collect();
        if self.left_kind == EndpointKind::Absorbing {
            pts[0] = self.lo();
        }
        if self.right_kind == EndpointKind::Absorbing {
            *pts.last_mut().unwrap() = self.hi();
        }
        pts
    }
}

/// `dX = vol(X) dB + drift(X) dt` on an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Diffusion {
    pub vol: ScalarFunction,
    pub drift: ScalarFunction,
    pub interval: Interval,
}

impl Diffusion {
    pub fn new(vol: ScalarFunction, drift: ScalarFunction, interval: Interval) -> Self {
        Diffusion { vol, drift, interval }
    }

    pub fn brownian(sigma: f64, mu: f64, interval: Interval) -> Self {
        Diffusion::new(ScalarFunction::constant(sigma), ScalarFunction::constant(mu), interval)
    }

    /// Exponential Brownian motion on `(0, inf)`.
    pub fn exponential_bm(sigma: f64, mu: f64) -> Self {
        Diffusion::new(
            ScalarFunction::linear(sigma, 0.0),
            ScalarFunction::linear(mu, 0.0),
            Interval::positive_half_line(EndpointKind::Natural),
        )
    }

    pub fn vol_at(&self, x: f64) -> Result<f64, EvalError> {
        self.vol.eval_finite(x)
    }

    pub fn drift_at(&self, x: f64) -> Result<f64, EvalError> {
        self.drift.eval_finite(x)
    }

    /// Zero drift by construction.
    pub fn is_natural_scale(&self) -> bool {
        self.drift.is_zero()
    }
}

/// A Poisson optimal stopping problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub name: Option<String>,
    pub diffusion: Diffusion,
    pub payoff: ScalarFunction,
    pub rate: ScalarFunction,
    pub beta: f64,
}

impl ProblemSpec {
    pub fn new(
        diffusion: Diffusion,
        payoff: ScalarFunction,
        rate: ScalarFunction,
        beta: f64,
    ) -> Result<Self, ModelError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(ModelError::Beta(beta));
        }
        diffusion.interval.check()?;
        Ok(ProblemSpec {
            name: None,
            diffusion,
            payoff,
            rate,
            beta,
        })
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn interval(&self) -> &Interval {
        &self.diffusion.interval
    }

    fn check_domain(&self, x: f64) -> Result<(), EvalError> {
        if self.interval().contains_closed(x) {
            Ok(())
        } else {
            Err(EvalError::Domain { x })
        }
    }

    pub fn payoff_at(&self, x: f64) -> Result<f64, EvalError> {
        self.check_domain(x)?;
        self.payoff.eval_finite(x)
    }

    /// Rate at `x`; `+inf` is allowed.
    pub fn rate_at(&self, x: f64) -> Result<f64, EvalError> {
        self.check_domain(x)?;
        self.rate.eval(x)
    }

    /// Rate with `+inf` replaced by `cap`; finite rates are left alone.
    pub fn rate_capped(&self, x: f64, cap: f64) -> Result<f64, EvalError> {
        Ok(cap_infinite(self.rate_at(x)?, cap))
    }

    /// Default cap standing in for an infinite rate.
    pub fn default_rate_cap(&self) -> f64 {
        1e4 * self.beta
    }

    /// Effective payoff `g theta / (beta + theta)`, equal to `g` where the rate is infinite.
    pub fn psi(&self, x: f64) -> Result<f64, EvalError> {
        let g = self.payoff_at(x)?;
        let theta = self.rate_at(x)?;
        Ok(psi_value(g, theta, self.beta))
    }

    /// `h theta / (beta + theta)` for an arbitrary value `h` at `x`.
    pub fn psi_of(&self, h: f64, x: f64) -> Result<f64, EvalError> {
        Ok(psi_value(h, self.rate_at(x)?, self.beta))
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ProblemFile = serde_json::from_str(text)?;
        file.into_problem()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut p = Self::from_json(&text)?;
        if p.name.is_none() {
            p.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        let file = ProblemFile {
            name: self.name.clone(),
            drift: self.diffusion.drift.clone(),
            vol: self.diffusion.vol.clone(),
            payoff: self.payoff.clone(),
            rate: self.rate.clone(),
            beta: self.beta,
            interval: self.diffusion.interval.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }
}

pub(crate) fn psi_value(g: f64, theta: f64, beta: f64) -> f64 {
    if theta == 0.0 {
        0.0
    } else if theta.is_infinite() {
        g
    } else {
        g * theta / (beta + theta)
    }
}

/// On-disk layout of a problem.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    drift: ScalarFunction,
    vol: ScalarFunction,
    payoff: ScalarFunction,
    rate: ScalarFunction,
    beta: f64,
    interval: Interval,
}

impl ProblemFile {
    fn into_problem(self) -> Result<ProblemSpec, ModelError> {
        let mut p = ProblemSpec::new(
            Diffusion::new(self.vol, self.drift, self.interval),
            self.payoff,
            self.rate,
            self.beta,
        )?;
        p.name = self.name;
        Ok(p)
    }
}
