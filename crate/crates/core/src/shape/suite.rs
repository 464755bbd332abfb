use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{check_concave, check_convex, check_monotone, concave_on, convex_on, monotone_on, ShapeError, ShapeReport, Witness};
use crate::model::{bundled, psi_value, Diffusion, Interval, ProblemSpec, ScalarFunction};
use crate::solver::{value_iteration, GOperator, Grid, SolverSettings, ValueFunction};
use crate::transform::kotani_check;

/// Probe grid size for hypothesis detection.
pub const PROBE_NODES: usize = 2049;

/// Outcome of a numeric hypothesis test. `Borderline` means the worst
/// violation lies inside the tolerance band but beyond rounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Hyp {
    Holds,
    Fails,
    Borderline,
}

impl Hyp {
    fn from_reports(strict: &ShapeReport, loose: &ShapeReport) -> Hyp {
        match (strict.holds(), loose.holds()) {
            (true, _) => Hyp::Holds,
            (false, true) => Hyp::Borderline,
            (false, false) => Hyp::Fails,
        }
    }

    pub fn holds(self) -> bool {
        self == Hyp::Holds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypotheses {
    pub theta_increasing: Hyp,
    pub psi_increasing: Hyp,
    pub psi_convex: Hyp,
    pub psi_concave: Hyp,
    pub natural_scale: bool,
    /// `None` when not in natural scale or inconclusive.
    pub kotani: Option<bool>,
    #[serde(skip)]
    witnesses: Vec<(Claim, Option<Witness>)>,
}

impl Hypotheses {
    pub fn borderline(&self) -> bool {
        [self.theta_increasing, self.psi_increasing, self.psi_convex, self.psi_concave].contains(&Hyp::Borderline)
    }

    fn claim(&self, c: Claim) -> Hyp {
        let flag = |b: bool| if b { Hyp::Holds } else { Hyp::Fails };
        match c {
            Claim::ThetaIncreasing => self.theta_increasing,
            Claim::PsiIncreasing => self.psi_increasing,
            Claim::PsiConvex => self.psi_convex,
            Claim::PsiConcave => self.psi_concave,
            Claim::NaturalScale => flag(self.natural_scale),
            Claim::Kotani => flag(self.kotani == Some(true)),
        }
    }
}

/// A hypothesis a suite case asserts about itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Claim {
    ThetaIncreasing,
    PsiIncreasing,
    PsiConvex,
    PsiConcave,
    NaturalScale,
    Kotani,
}

#[derive(Debug, Clone)]
pub struct ShapeCase {
    pub problem: ProblemSpec,
    pub claims: Vec<Claim>,
}

impl ShapeCase {
    pub fn new(problem: ProblemSpec, claims: impl Into<Vec<Claim>>) -> Self {
        ShapeCase { problem, claims: claims.into() }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteSettings {
    pub solver: SolverSettings,
    pub grid_nodes: usize,
    /// Relative shape tolerance for the solved value function.
    pub tol: f64,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        SuiteSettings {
            solver: SolverSettings::default(),
            grid_nodes: 2001,
            tol: super::SOLVER_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theorem {
    /// Rate and effective payoff increasing give an increasing limit.
    Monotone,
    /// Natural scale, martingale time change and convex effective payoff give
    /// a convex limit dominating the effective payoff at the first arrival.
    Convex,
    /// Natural scale and concave effective payoff: the first-arrival value is
    /// the limit and is concave.
    Concave,
    /// Effective payoff increasing with a decreasing rate: recorded only.
    MonotoneDecreasingRate,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClaimOutcome {
    pub theorem: Theorem,
    /// False for outcomes recorded without a hard assertion.
    pub asserted: bool,
    pub holds: bool,
    pub reports: Vec<ShapeReport>,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub name: String,
    /// Problem definition, when it can be serialized.
    pub problem: Option<serde_json::Value>,
    pub hypotheses: Hypotheses,
    pub iterations: usize,
    pub converged: bool,
    /// Shape of the limit regardless of hypotheses.
    pub observed: Vec<ShapeReport>,
    pub outcomes: Vec<ClaimOutcome>,
    pub error: Option<String>,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.outcomes.iter().all(|o| !o.asserted || o.holds)
    }

    pub fn observed(&self, property: super::Property) -> Option<&ShapeReport> {
        self.observed.iter().find(|r| r.property == property)
    }

    pub fn outcome(&self, theorem: Theorem) -> Option<&ClaimOutcome> {
        self.outcomes.iter().find(|o| o.theorem == theorem)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub cases: Vec<CaseReport>,
    pub passed: bool,
    pub asserted: usize,
    pub violations: usize,
}

impl SuiteReport {
    pub fn case(&self, name: &str) -> Option<&CaseReport> {
        self.cases.iter().find(|c| c.name == name)
    }
}

/// Numeric hypothesis tests on a probe grid spanning the solve range.
pub fn detect_hypotheses(p: &ProblemSpec, s: &SuiteSettings) -> Result<Hypotheses, ShapeError> {
    let template = Grid::for_problem(p, s.grid_nodes, None)?;
    let probe = Grid::for_problem(p, PROBE_NODES, Some(template.spacing()))?;
    let xs = probe.nodes();
    let cap = s.solver.rate_cap_for(p);
    let mut theta = Vec::with_capacity(xs.len());
    let mut psi = Vec::with_capacity(xs.len());
    for &x in xs {
        let t = p.rate_capped(x, cap).map_err(crate::solver::SolverError::Eval)?;
        let g = p.payoff_at(x).map_err(crate::solver::SolverError::Eval)?;
        theta.push(t);
        psi.push(psi_value(g, t, p.beta));
    }
    let classify = |f: fn(&[f64], &[f64], f64) -> Result<ShapeReport, ShapeError>, ys: &[f64]| -> Result<(Hyp, Option<Witness>), ShapeError> {
        let strict = f(xs, ys, 0.0)?;
        let loose = f(xs, ys, s.tol)?;
        Ok((Hyp::from_reports(&strict, &loose), loose.witness.or(strict.witness)))
    };
    let (theta_increasing, w0) = classify(monotone_on, &theta)?;
    let (psi_increasing, w1) = classify(monotone_on, &psi)?;
    let (psi_convex, w2) = classify(convex_on, &psi)?;
    let (psi_concave, w3) = classify(concave_on, &psi)?;
    let natural_scale = p.diffusion.is_natural_scale();
    let kotani = if natural_scale {
        let r = kotani_check(p).map_err(|e| ShapeError::Settings(e.to_string()))?;
        match (r[0].holds(), r[1].holds()) {
            (Some(true), Some(true)) => Some(true),
            (Some(false), _) | (_, Some(false)) => Some(false),
            _ => None,
        }
    } else {
        None
    };
    Ok(Hypotheses {
        theta_increasing,
        psi_increasing,
        psi_convex,
        psi_concave,
        natural_scale,
        kotani,
        witnesses: vec![
            (Claim::ThetaIncreasing, w0),
            (Claim::PsiIncreasing, w1),
            (Claim::PsiConvex, w2),
            (Claim::PsiConcave, w3),
        ],
    })
}

fn case_name(p: &ProblemSpec, i: usize) -> String {
    p.name.clone().unwrap_or_else(|| format!("case-{i}"))
}

/// Solves every case and checks the shape theorems whose hypotheses hold.
///
/// Fails with `AnnotationMismatch` when a case claims a hypothesis that the
/// numeric check rejects; borderline hypotheses are never asserted.
pub fn verify_shape_theorems(cases: &[ShapeCase], s: &SuiteSettings) -> Result<SuiteReport, ShapeError> {
    let hyps = cases
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let h = detect_hypotheses(&c.problem, s)?;
            for &claim in &c.claims {
                if h.claim(claim) == Hyp::Fails {
                    let witness = h.witnesses.iter().find(|w| w.0 == claim).and_then(|w| w.1.clone());
                    return Err(ShapeError::AnnotationMismatch { case: case_name(&c.problem, i), claim, witness });
                }
            }
            Ok(h)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let reports: Vec<CaseReport> = cases
        .par_iter()
        .zip(hyps)
        .enumerate()
        .map(|(i, (c, h))| run_case(case_name(&c.problem, i), &c.problem, h, s))
        .collect();
    let asserted = reports.iter().flat_map(|r| &r.outcomes).filter(|o| o.asserted).count();
    let violations = reports.iter().flat_map(|r| &r.outcomes).filter(|o| o.asserted && !o.holds).count()
        + reports.iter().filter(|r| r.error.is_some()).count();
    Ok(SuiteReport {
        passed: violations == 0,
        cases: reports,
        asserted,
        violations,
    })
}

fn run_case(name: String, p: &ProblemSpec, h: Hypotheses, s: &SuiteSettings) -> CaseReport {
    let mut report = CaseReport {
        name,
        problem: p.to_json().ok().and_then(|j| serde_json::from_str(&j).ok()),
        hypotheses: h,
        iterations: 0,
        converged: false,
        observed: Vec::new(),
        outcomes: Vec::new(),
        error: None,
    };
    if let Err(e) = solve_case(p, s, &mut report) {
        report.error = Some(e.to_string());
    }
    report
}

fn solve_case(p: &ProblemSpec, s: &SuiteSettings, out: &mut CaseReport) -> Result<(), ShapeError> {
    let grid = Grid::for_problem(p, s.grid_nodes, None)?;
    let (v, it) = value_iteration(p, &grid, &s.solver)?;
    out.iterations = it.iterations;
    out.converged = it.converged;
    let mono = check_monotone(&v, s.tol)?;
    let convex = check_convex(&v, s.tol)?;
    let concave = check_concave(&v, s.tol)?;
    out.observed = vec![mono.clone(), convex.clone(), concave.clone()];
    let h = &out.hypotheses;
    let natural = h.natural_scale;

    if h.psi_increasing.holds() && h.theta_increasing.holds() {
        out.outcomes.push(ClaimOutcome {
            theorem: Theorem::Monotone,
            asserted: true,
            holds: mono.holds(),
            reports: vec![mono.clone()],
            detail: None,
        });
    } else if h.psi_increasing.holds() && h.theta_increasing == Hyp::Fails {
        out.outcomes.push(ClaimOutcome {
            theorem: Theorem::MonotoneDecreasingRate,
            asserted: false,
            holds: mono.holds(),
            reports: vec![mono.clone()],
            detail: None,
        });
    }

    if natural && h.kotani == Some(true) && h.psi_convex.holds() {
        let first = first_arrival(p, &grid, s)?;
        let dominance = dominates_psi(p, &first, 2.0 * s.tol, s)?;
        out.outcomes.push(ClaimOutcome {
            theorem: Theorem::Convex,
            asserted: true,
            holds: convex.holds() && dominance.is_none(),
            reports: vec![convex.clone()],
            detail: dominance,
        });
    }

    if natural && h.psi_concave.holds() {
        let increment = it.increments.get(1).copied().unwrap_or(0.0);
        let fixed = increment <= s.solver.tol.max(s.tol * scale(&v));
        out.outcomes.push(ClaimOutcome {
            theorem: Theorem::Concave,
            asserted: true,
            holds: fixed && concave.holds(),
            reports: vec![concave],
            detail: (!fixed).then(|| format!("increment after the first sweep {increment:e}")),
        });
    }
    Ok(())
}

fn scale(v: &ValueFunction) -> f64 {
    v.values().iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn first_arrival(p: &ProblemSpec, grid: &Grid, s: &SuiteSettings) -> Result<ValueFunction, ShapeError> {
    let op = GOperator::new(p, grid, &s.solver.boundary, s.solver.rate_cap_for(p))?;
    Ok(op.apply_function(&p.payoff)?)
}

/// `None` when `G >= Psi - tol * scale` at every node, else a description of
/// the worst node.
fn dominates_psi(p: &ProblemSpec, first: &ValueFunction, tol: f64, s: &SuiteSettings) -> Result<Option<String>, ShapeError> {
    let cap = s.solver.rate_cap_for(p);
    let band = tol * scale(first);
    let mut worst: Option<(f64, f64)> = None;
    for (&x, &gv) in first.nodes().iter().zip(first.values()) {
        let t = p.rate_capped(x, cap).map_err(crate::solver::SolverError::Eval)?;
        let psi = psi_value(p.payoff_at(x).map_err(crate::solver::SolverError::Eval)?, t, p.beta);
        let gap = gv - psi;
        if gap < -band && worst.is_none_or(|w| gap < w.1) {
            worst = Some((x, gap));
        }
    }
    Ok(worst.map(|(x, gap)| format!("first-arrival value below the effective payoff by {:e} at x = {x}", -gap)))
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

/// Randomized problems with increasing rate and payoff (hence increasing
/// effective payoff), with drift and state-dependent volatility.
pub fn monotone_suite(n: usize, seed: u64) -> Vec<ShapeCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let sigma = rng.gen_range(0.5..1.5);
            let wobble = rng.gen_range(0.0..0.3);
            let mu = rng.gen_range(-0.3..0.3);
            let bend = rng.gen_range(0.0..0.2);
            let t0 = rng.gen_range(0.5..4.0);
            let t1 = rng.gen_range(0.0..3.0);
            let tc = rng.gen_range(-1.0..1.0);
            let g0 = rng.gen_range(0.0..0.2);
            let g1 = rng.gen_range(0.2..1.5);
            let k = rng.gen_range(-1.0..1.0);
            let g2 = rng.gen_range(0.0..1.0);
            let beta = rng.gen_range(0.05..0.4);
            let vol = format!("{}*(1 + {}*tanh(x))", fmt(sigma), fmt(wobble));
            let drift = format!("{} + {}*sin(x)", fmt(mu), fmt(bend));
            let rate = format!("{} + {}/(1 + exp(-(x - {})))", fmt(t0), fmt(t1), fmt(tc));
            let payoff = format!("{} + {}*max(x - {}, 0) + {}/(1 + exp(-x))", fmt(g0), fmt(g1), fmt(k), fmt(g2));
            let p = ProblemSpec::new(
                Diffusion::new(ScalarFunction::parse(&vol).unwrap(), ScalarFunction::parse(&drift).unwrap(), Interval::real_line()),
                ScalarFunction::parse(&payoff).unwrap(),
                ScalarFunction::parse(&rate).unwrap(),
                beta,
            )
            .expect("generated problem is well formed")
            .named(format!("monotone-{i}"));
            ShapeCase::new(p, [Claim::ThetaIncreasing, Claim::PsiIncreasing])
        })
        .collect()
}

/// Randomized driftless problems with constant rate and convex payoff, on the
/// line with state-dependent volatility and on the half-line as driftless
/// exponential Brownian motion.
pub fn convex_suite(n: usize, seed: u64) -> Vec<ShapeCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let lambda = rng.gen_range(1.0..10.0);
            let beta = rng.gen_range(0.05..0.4);
            let p = if i % 4 == 3 {
                let sigma = rng.gen_range(0.15..0.5);
                let strike = rng.gen_range(0.5..2.0);
                ProblemSpec::new(
                    Diffusion::exponential_bm(sigma, 0.0),
                    ScalarFunction::parse(&format!("max(x - {}, 0)", fmt(strike))).unwrap(),
                    ScalarFunction::constant(lambda),
                    beta,
                )
            } else {
                let sigma = rng.gen_range(0.5..1.5);
                let wobble = rng.gen_range(0.0..0.4);
                let g0 = rng.gen_range(0.0..0.2);
                let g1 = rng.gen_range(0.2..1.5);
                let k1 = rng.gen_range(-1.0..1.0);
                let g2 = rng.gen_range(0.0..1.0);
                let k2 = rng.gen_range(-1.0..1.0);
                let g3 = rng.gen_range(0.0..0.5);
                let payoff = format!(
                    "{} + {}*max(x - {}, 0) + {}*max({} - x, 0) + {}*sqrt(1 + x*x)",
                    fmt(g0),
                    fmt(g1),
                    fmt(k1),
                    fmt(g2),
                    fmt(k2),
                    fmt(g3)
                );
                ProblemSpec::new(
                    Diffusion::new(
                        ScalarFunction::parse(&format!("{}*(1 + {}*tanh(x))", fmt(sigma), fmt(wobble))).unwrap(),
                        ScalarFunction::constant(0.0),
                        Interval::real_line(),
                    ),
                    ScalarFunction::parse(&payoff).unwrap(),
                    ScalarFunction::constant(lambda),
                    beta,
                )
            }
            .expect("generated problem is well formed")
            .named(format!("convex-{i}"));
            ShapeCase::new(p, [Claim::NaturalScale, Claim::Kotani, Claim::PsiConvex])
        })
        .collect()
}

/// The randomized suites plus the constant effective payoff example, the
/// driftless call, and the two counterexamples.
pub fn standard_suite(n: usize, seed: u64) -> Vec<ShapeCase> {
    let mut cases = monotone_suite(n, seed);
    cases.extend(convex_suite(n, seed.wrapping_add(1)));
    let named = |name: &str| bundled(name).expect("bundled example").expect("bundled example parses");
    cases.push(ShapeCase::new(named("psi_half"), [Claim::NaturalScale, Claim::PsiConvex, Claim::PsiConcave]));
    cases.push(ShapeCase::new(named("eg2_3"), [Claim::NaturalScale, Claim::Kotani, Claim::PsiConvex]));
    cases.push(ShapeCase::new(named("eg2_2"), []));
    cases.push(ShapeCase::new(named("eg2_4"), []));
    cases
}
