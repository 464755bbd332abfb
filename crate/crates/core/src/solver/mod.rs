//! Finite-difference first-arrival operator and value iteration.

mod grid;
mod operator;
mod value;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::analytic::{q_roots, AnalyticError};
use crate::model::{cap_infinite, validate_problem, Assumption, EvalError, ProblemSpec, Side, Status};

pub use grid::{Grid, Spacing, MIN_NODES};
pub use operator::{g_operator, GOperator};
pub use value::{Extrapolation, ValueFunction};

/// Upper bound on policy-improvement steps in the accelerated scheme.
const MAX_POLICY_STEPS: usize = 500;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("grid: {0}")]
    Grid(String),
    #[error("settings: {0}")]
    Settings(String),
    #[error("singular system at node {node} (x = {x}), pivot {pivot:e}")]
    SingularSystem { node: usize, x: f64, pivot: f64 },
    #[error("no boundary condition for the truncated {side:?} end")]
    MissingBoundary { side: Side },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error("problem fails its assumptions: {}", .0.join("; "))]
    Assumptions(Vec<String>),
}

/// Condition imposed where the grid stops short of a natural endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// Vanishing second difference over the last three nodes.
    LinearExtrapolation,
    /// `u(x_end) = u(x_next) (x_end / x_next)^exponent`.
    PowerLaw { exponent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPolicy {
    pub left: Option<BoundaryCondition>,
    pub right: Option<BoundaryCondition>,
}

impl Default for BoundaryPolicy {
    fn default() -> Self {
        BoundaryPolicy {
            left: Some(BoundaryCondition::LinearExtrapolation),
            right: Some(BoundaryCondition::LinearExtrapolation),
        }
    }
}

impl BoundaryPolicy {
    pub fn get(&self, side: Side) -> Option<BoundaryCondition> {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }

    /// Power laws `x^{alpha+}` at the left end and `x^{alpha-}` at the right,
    /// the decaying solutions of `(sigma^2/2) x^2 u'' + mu x u' = zeta u`.
    pub fn exponential_bm(sigma: f64, mu: f64, zeta: f64) -> Result<BoundaryPolicy, SolverError> {
        let r = q_roots(sigma, mu, zeta)?;
        Ok(BoundaryPolicy {
            left: Some(BoundaryCondition::PowerLaw { exponent: r.plus }),
            right: Some(BoundaryCondition::PowerLaw { exponent: r.minus }),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IterationScheme {
    /// `V <- G(max(g, V))` until the increment drops below the tolerance.
    Plain,
    /// `warmup` plain sweeps, then policy iteration on the stop/continue
    /// split, finished by one plain sweep. For rates large against `beta`,
    /// where plain sweeps contract by only `theta/(beta+theta)`.
    Accelerated { warmup: usize },
}

/// What to do with the assumption check before solving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validation {
    /// Coefficient, boundary or admissibility failures are errors; rate
    /// failures and inconclusive checks are warnings.
    Require,
    /// Every failure becomes a warning.
    Acknowledge,
    Skip,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iterations: usize,
    pub boundary: BoundaryPolicy,
    /// Stand-in for infinite rates; `None` means `1e4 beta`.
    pub rate_cap: Option<f64>,
    pub scheme: IterationScheme,
    pub validation: Validation,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-8,
            max_iterations: 10_000,
            boundary: BoundaryPolicy::default(),
            rate_cap: None,
            scheme: IterationScheme::Plain,
            validation: Validation::Require,
        }
    }
}

impl SolverSettings {
    pub fn rate_cap_for(&self, p: &ProblemSpec) -> f64 {
        self.rate_cap.unwrap_or_else(|| p.default_rate_cap())
    }
}

fn secs<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationReport {
    pub iterations: usize,
    /// `sup |V^(n+1) - V^(n)|` per sweep or policy step.
    pub increments: Vec<f64>,
    /// `min (V^(n+1) - V^(n))` per sweep or policy step.
    pub min_increments: Vec<f64>,
    pub converged: bool,
    pub residual: f64,
    #[serde(serialize_with = "secs")]
    pub wall_time: Duration,
    pub policy_steps: usize,
    /// Status of the rate integrability check, when validation ran.
    pub rate_assumption: Option<Status>,
    pub warnings: Vec<String>,
    pub upwind_nodes: usize,
    pub rate_cap: f64,
}

impl IterationReport {
    pub fn rate_assumption_failed(&self) -> bool {
        self.rate_assumption == Some(Status::Fail)
    }

    /// Smallest signed increment over all sweeps.
    pub fn worst_decrease(&self) -> f64 {
        self.min_increments.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

fn node_values(f: impl Fn(f64) -> Result<f64, EvalError>, xs: &[f64]) -> Result<Vec<f64>, SolverError> {
    xs.iter().map(|&x| f(x).map_err(SolverError::from)).collect()
}

fn increment(new: &[f64], old: &[f64]) -> (f64, f64) {
    new.iter().zip(old).fold((0.0, f64::INFINITY), |(sup, min), (a, b)| {
        let d = a - b;
        (sup.max(d.abs()), min.min(d))
    })
}

fn check_assumptions(p: &ProblemSpec, validation: Validation, warnings: &mut Vec<String>) -> Result<Option<Status>, SolverError> {
    if validation == Validation::Skip {
        return Ok(None);
    }
    let report = validate_problem(p);
    let mut hard = Vec::new();
    for f in &report.findings {
        let line = format!("{:?} check '{}': {}", f.assumption, f.check, f.detail).to_lowercase();
        match f.status {
            Status::Pass => {}
            Status::Fail if f.assumption != Assumption::Rate && validation == Validation::Require => hard.push(line),
            Status::Fail => warnings.push(format!("failed {line}")),
            Status::Inconclusive => warnings.push(format!("inconclusive {line}")),
        }
    }
    if !hard.is_empty() {
        return Err(SolverError::Assumptions(hard));
    }
    if report.status(Assumption::Rate) == Status::Fail {
        let msg = "rate integrability fails: the iteration limit may differ from the value function";
        log::warn!("{msg}");
        warnings.push(msg.to_string());
    }
    Ok(Some(report.status(Assumption::Rate)))
}

/// Iterates `V^(0) = 0`, `V^(n+1) = G(max(g, V^(n)))`.
///
/// Stops when the sup-norm increment falls below `tol` or after
/// `max_iterations` sweeps; the last iterate is returned either way and the
/// report records whether it converged.
pub fn value_iteration(
    p: &ProblemSpec,
    grid: &Grid,
    settings: &SolverSettings,
) -> Result<(ValueFunction, IterationReport), SolverError> {
    let start = Instant::now();
    if !(settings.tol > 0.0) {
        return Err(SolverError::Settings(format!("tol must be positive, got {}", settings.tol)));
    }
    let mut warnings = Vec::new();
    let rate_assumption = check_assumptions(p, settings.validation, &mut warnings)?;
    let cap = settings.rate_cap_for(p);
    let op = GOperator::new(p, grid, &settings.boundary, cap)?;
    let g = node_values(|x| p.payoff_at(x), grid.nodes())?;
    let n = grid.len();

    let mut v = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut increments = Vec::new();
    let mut min_increments = Vec::new();
    let mut converged = false;
    let sweeps = match settings.scheme {
        IterationScheme::Plain => settings.max_iterations,
        IterationScheme::Accelerated { warmup } => warmup.min(settings.max_iterations),
    };
    let sweep = |v: &mut Vec<f64>, h: &mut Vec<f64>, inc: &mut Vec<f64>, minc: &mut Vec<f64>| {
        for i in 0..n {
            h[i] = g[i].max(v[i]);
        }
        let u = op.apply(h);
        let (sup, min) = increment(&u, v);
        inc.push(sup);
        minc.push(min);
        *v = u;
        sup
    };
    for _ in 0..sweeps {
        if sweep(&mut v, &mut h, &mut increments, &mut min_increments) < settings.tol {
            converged = true;
            break;
        }
    }
    let mut policy_steps = 0;
    if let (IterationScheme::Accelerated { .. }, false) = (settings.scheme, converged) {
        let interior = |u: &[f64]| -> Vec<bool> { (0..n).map(|i| i > 0 && i < n - 1 && u[i] > g[i]).collect() };
        let mut cont = interior(&v);
        while policy_steps < MAX_POLICY_STEPS {
            let u = op.solve_policy(&g, &cont)?;
            policy_steps += 1;
            let (sup, min) = increment(&u, &v);
            increments.push(sup);
            min_increments.push(min);
            v = u;
            let next = interior(&v);
            if next == cont {
                break;
            }
            cont = next;
        }
        converged = sweep(&mut v, &mut h, &mut increments, &mut min_increments) < settings.tol;
    }
    if !converged {
        let msg = format!(
            "value iteration stopped after {} steps with increment {:e}",
            increments.len(),
            increments.last().copied().unwrap_or(f64::NAN)
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let worst = min_increments.iter().cloned().fold(f64::INFINITY, f64::min);
    if worst < -settings.tol {
        warnings.push(format!("iterates decreased by {:e}", -worst));
    }
    let vf = op.wrap(v);
    let residual = residual_with_cap(p, &vf, cap)?;
    let report = IterationReport {
        iterations: increments.len(),
        increments,
        min_increments,
        converged,
        residual,
        wall_time: start.elapsed(),
        policy_steps,
        rate_assumption,
        warnings,
        upwind_nodes: op.upwind_nodes(),
        rate_cap: cap,
    };
    Ok((vf, report))
}

/// Sup-norm of `a^2 V''/2 + b V' - (beta + theta) V + theta max(g, V)`
/// over interior nodes, by central differences.
///
/// Nodes within two of a crossing between `g` and `V` are skipped, as are
/// nodes with an infinite rate.
pub fn residual(p: &ProblemSpec, v: &ValueFunction) -> Result<f64, SolverError> {
    residual_with_cap(p, v, f64::INFINITY)
}

fn residual_with_cap(p: &ProblemSpec, v: &ValueFunction, cap: f64) -> Result<f64, SolverError> {
    let xs = v.nodes();
    let u = v.values();
    let n = xs.len();
    let g = node_values(|x| p.payoff_at(x), xs)?;
    let above: Vec<bool> = (0..n).map(|i| g[i] > u[i]).collect();
    let mut skip = vec![false; n];
    for i in 0..n - 1 {
        if above[i] != above[i + 1] {
            for k in i.saturating_sub(1)..(i + 3).min(n) {
                skip[k] = true;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for i in 1..n - 1 {
        if skip[i] {
            continue;
        }
        let theta = p.rate_at(xs[i])?;
        if theta.is_infinite() && cap.is_infinite() {
            continue;
        }
        let theta = cap_infinite(theta, cap);
        let (hm, hp) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
        let span = hm + hp;
        let d2 = 2.0 * ((u[i + 1] - u[i]) / hp - (u[i] - u[i - 1]) / hm) / span;
        let d1 = (hm * (u[i + 1] - u[i]) / hp + hp * (u[i] - u[i - 1]) / hm) / span;
        let a = p.diffusion.vol_at(xs[i])?;
        let b = p.diffusion.drift_at(xs[i])?;
        let r = 0.5 * a * a * d2 + b * d1 - (p.beta + theta) * u[i] + theta * g[i].max(u[i]);
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

/// `H = max(g, V)` node-wise.
pub fn conditional_value(p: &ProblemSpec, v: &ValueFunction) -> Result<ValueFunction, SolverError> {
    let values = v
        .nodes()
        .iter()
        .zip(v.values())
        .map(|(&x, &val)| Ok(p.payoff_at(x)?.max(val)))
        .collect::<Result<Vec<f64>, SolverError>>()?;
    let [l, r] = v.extrapolation();
    Ok(ValueFunction::new(v.grid().clone(), values).with_extrapolation(l, r))
}
