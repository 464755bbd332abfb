//! Monotonicity and convexity detectors for sampled functions, the theorem
//! suites relating the shape of the value function to the shape of the
//! effective payoff and the rate, and the discounted growth check.

mod growth;
mod suite;

use serde::Serialize;
use thiserror::Error;

use crate::mc::McError;
use crate::solver::{SolverError, ValueFunction};

pub use growth::{growth_condition_check, growth_condition_check_with, payoff_bound, GrowthReport, GrowthRow, GrowthSettings, GrowthVerdict};
pub use suite::{
    convex_suite, detect_hypotheses, monotone_suite, standard_suite, verify_shape_theorems, CaseReport, Claim, ClaimOutcome, Hyp,
    Hypotheses, ShapeCase, SuiteReport, SuiteSettings, Theorem, PROBE_NODES,
};

/// Default relative tolerance for solver output.
pub const SOLVER_TOL: f64 = 1e-6;
/// Default relative tolerance for closed-form values.
pub const ORACLE_TOL: f64 = 1e-10;

/// Floating-point allowance, in units of the value scale.
const ROUNDING: f64 = 8.0 * f64::EPSILON;

#[derive(Debug, Error)]
pub enum ShapeError {
    #[error("too few nodes for a {property:?} check: {n}")]
    TooFewNodes { property: Property, n: usize },
    #[error("node and value counts differ: {0} vs {1}")]
    Mismatch(usize, usize),
    #[error("case {case}: claimed {claim:?} but the numeric check fails")]
    AnnotationMismatch { case: String, claim: Claim, witness: Option<Witness> },
    #[error("{0}")]
    Settings(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Mc(#[from] McError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Property {
    MonotoneIncreasing,
    Convex,
    Concave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Holds,
    Fails,
}

/// The worst violating pair (monotonicity) or triple (convexity) of nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
    /// Size of the violation beyond the tolerance band: a decrease for
    /// monotonicity, a negative second difference for convexity.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapeReport {
    pub property: Property,
    pub verdict: Verdict,
    /// Relative tolerance as supplied.
    pub tolerance: f64,
    /// `max |value|`; monotone steps are compared with `tolerance * scale`,
    /// second differences with `tolerance * scale / width^2`.
    pub scale: f64,
    /// Most negative normalized statistic over the grid (first differences or
    /// second differences), zero when there is nothing to test.
    pub worst: f64,
    pub witness: Option<Witness>,
}

impl ShapeReport {
    pub fn holds(&self) -> bool {
        self.verdict == Verdict::Holds
    }
}

fn scale_of(ys: &[f64]) -> f64 {
    ys.iter().fold(0.0f64, |m, y| m.max(y.abs()))
}

fn check_lengths(xs: &[f64], ys: &[f64], property: Property, min: usize) -> Result<(), ShapeError> {
    if xs.len() != ys.len() {
        return Err(ShapeError::Mismatch(xs.len(), ys.len()));
    }
    if xs.len() < min {
        return Err(ShapeError::TooFewNodes { property, n: xs.len() });
    }
    Ok(())
}

/// Increasing test on sampled values: `y[i+1] - y[i] >= -tol * scale`.
pub fn monotone_on(xs: &[f64], ys: &[f64], tol: f64) -> Result<ShapeReport, ShapeError> {
    check_lengths(xs, ys, Property::MonotoneIncreasing, 2)?;
    let scale = scale_of(ys);
    let band = (tol + ROUNDING) * scale;
    let mut worst = (f64::INFINITY, 0);
    for i in 0..xs.len() - 1 {
        let d = ys[i + 1] - ys[i];
        if d < worst.0 {
            worst = (d, i);
        }
    }
    let (d, i) = worst;
    let fails = d < -band || d.is_nan();
    Ok(ShapeReport {
        property: Property::MonotoneIncreasing,
        verdict: if fails { Verdict::Fails } else { Verdict::Holds },
        tolerance: tol,
        scale,
        worst: d.min(0.0),
        witness: fails.then(|| Witness {
            nodes: vec![xs[i], xs[i + 1]],
            values: vec![ys[i], ys[i + 1]],
            magnitude: -d - band,
        }),
    })
}

fn curvature_on(xs: &[f64], ys: &[f64], tol: f64, property: Property) -> Result<ShapeReport, ShapeError> {
    check_lengths(xs, ys, property, 3)?;
    let sign = if property == Property::Concave { -1.0 } else { 1.0 };
    let scale = scale_of(ys);
    let width = xs[xs.len() - 1] - xs[0];
    let floor = tol * scale / (width * width);
    let mut worst = (f64::INFINITY, 0, 0.0);
    for i in 1..xs.len() - 1 {
        let (hm, hp) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
        let (dm, dp) = (sign * (ys[i] - ys[i - 1]), sign * (ys[i + 1] - ys[i]));
        let d2 = 2.0 * (dp / hp - dm / hm) / (hm + hp);
        // Equivalent to `d2 >= -floor` with a rounding allowance on the values.
        let allowance = floor + 4.0 * ROUNDING * scale / (hm * hp);
        let excess = d2 + allowance;
        if excess < worst.0 || excess.is_nan() {
            worst = (excess, i, d2);
        }
    }
    let (excess, i, d2) = worst;
    let fails = excess < 0.0 || excess.is_nan();
    Ok(ShapeReport {
        property,
        verdict: if fails { Verdict::Fails } else { Verdict::Holds },
        tolerance: tol,
        scale,
        worst: d2.min(0.0),
        witness: fails.then(|| Witness {
            nodes: xs[i - 1..=i + 1].to_vec(),
            values: ys[i - 1..=i + 1].to_vec(),
            magnitude: -excess,
        }),
    })
}

/// Convexity via nonuniform second differences.
pub fn convex_on(xs: &[f64], ys: &[f64], tol: f64) -> Result<ShapeReport, ShapeError> {
    curvature_on(xs, ys, tol, Property::Convex)
}

pub fn concave_on(xs: &[f64], ys: &[f64], tol: f64) -> Result<ShapeReport, ShapeError> {
    curvature_on(xs, ys, tol, Property::Concave)
}

pub fn check_monotone(v: &ValueFunction, tol: f64) -> Result<ShapeReport, ShapeError> {
    monotone_on(v.nodes(), v.values(), tol)
}

pub fn check_convex(v: &ValueFunction, tol: f64) -> Result<ShapeReport, ShapeError> {
    convex_on(v.nodes(), v.values(), tol)
}

pub fn check_concave(v: &ValueFunction, tol: f64) -> Result<ShapeReport, ShapeError> {
    concave_on(v.nodes(), v.values(), tol)
}

/// Runs one property by name.
pub fn check(v: &ValueFunction, property: Property, tol: f64) -> Result<ShapeReport, ShapeError> {
    match property {
        Property::MonotoneIncreasing => check_monotone(v, tol),
        Property::Convex => check_convex(v, tol),
        Property::Concave => check_concave(v, tol),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn affine_is_convex_and_concave_at_zero_tolerance() {
        let xs: Vec<f64> = grid(101, -3.0, 7.0).iter().map(|x| x + 0.01 * x.sin()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.3 * x - 1.7).collect();
        assert!(convex_on(&xs, &ys, 0.0).unwrap().holds());
        assert!(concave_on(&xs, &ys, 0.0).unwrap().holds());
    }

    #[test]
    fn constant_is_monotone() {
        let xs = grid(10, 0.0, 1.0);
        assert!(monotone_on(&xs, &[2.0; 10], 0.0).unwrap().holds());
    }

    #[test]
    fn failure_carries_witness() {
        let xs = grid(5, 0.0, 4.0);
        let r = monotone_on(&xs, &[0.0, 1.0, 0.5, 2.0, 3.0], 1e-6).unwrap();
        assert_eq!(r.verdict, Verdict::Fails);
        assert_eq!(r.witness.unwrap().nodes, vec![1.0, 2.0]);
        let r = convex_on(&xs, &[0.0, 1.0, 0.5, 2.0, 3.0], 1e-6).unwrap();
        assert_eq!(r.witness.unwrap().nodes, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn too_few_nodes() {
        assert!(convex_on(&[0.0, 1.0], &[0.0, 1.0], 0.0).is_err());
        assert!(monotone_on(&[0.0], &[0.0], 0.0).is_err());
    }
}
