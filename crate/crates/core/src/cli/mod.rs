//! Command-line front end: `solve`, `oracle`, `simulate`, `transform`,
//! `classify`, `check` and `validate`.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 validation failure,
//! 3 failed assertion.

mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::analytic::{
    dw_solution, sinh_drift_solution, AmericanCall, BarrierRate, LinearPayoff, LocalTimeExample, NonEquality, Oracle,
};
use crate::mc::{estimate_g, evaluate_policy, McError, McSettings};
use crate::model::{bundled, bundled_names, validate_problem, Interval, ProblemSpec, Side};
use crate::shape::{growth_condition_check_with, standard_suite, verify_shape_theorems, GrowthSettings, GrowthVerdict, SuiteSettings};
use crate::solver::{conditional_value, residual, value_iteration, Grid, IterationScheme, SolverError, SolverSettings, Spacing, Validation};
use crate::transform::{classify_diffusion, kotani_check, scale_function};
use output::{Output, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ASSERTION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "poisson-stop", version, about = "Optimal stopping at Poisson event times of a one-dimensional diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Value iteration on a grid; table columns x,V,g,psi,H.
    Solve(SolveArgs),
    /// Closed-form value on a grid; table columns x,value,payoff,psi.
    Oracle(OracleArgs),
    /// Monte Carlo estimate of the first-arrival value or a threshold policy.
    Simulate(SimulateArgs),
    /// Scale function of the diffusion; table columns x,s,s_prime.
    Transform(TransformArgs),
    /// Endpoint classification.
    Classify(ProblemArgs),
    /// Theorem suites.
    Check(CheckArgs),
    /// Standing-assumption report; exits 2 when any check fails.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum GridKind {
    Log,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Scheme {
    Plain,
    Accelerated,
}

#[derive(Debug, Args, Serialize)]
struct ProblemArgs {
    /// Problem file (JSON).
    #[arg(long, conflicts_with = "example")]
    problem: Option<PathBuf>,
    /// Bundled problem by name.
    #[arg(long)]
    example: Option<String>,
}

#[derive(Debug, Args, Serialize)]
struct OutArgs {
    /// Output directory; tables go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Debug, Args, Serialize)]
struct GridArgs {
    #[arg(long, default_value_t = 2001)]
    grid_nodes: usize,
    /// Grid spacing; chosen from the problem when absent.
    #[arg(long, value_enum)]
    grid: Option<GridKind>,
    #[arg(long)]
    lo: Option<f64>,
    #[arg(long)]
    hi: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iterations: usize,
    #[arg(long, value_enum, default_value = "plain")]
    scheme: Scheme,
    /// Plain sweeps before policy iteration in the accelerated scheme.
    #[arg(long, default_value_t = 50)]
    warmup: usize,
    /// Replacement for infinite rates; 1e4 * beta when absent.
    #[arg(long)]
    rate_cap: Option<f64>,
    /// Proceed despite failed standing assumptions.
    #[arg(long)]
    acknowledge: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum OracleName {
    /// Call payoff on exponential Brownian motion with constant rate.
    Dw,
    /// Unconstrained perpetual American call.
    American,
    /// Linear payoff, constant rate.
    Linear,
    /// Linear payoff with a barrier rate.
    Barrier,
    /// Unit-drift Brownian motion absorbed at zero.
    Sinh,
    /// Piecewise-linear payoff on Brownian motion.
    HPhi,
    /// Indicator payoff with rate x^-2.
    Nonequality,
}

#[derive(Debug, Args, Serialize)]
struct OracleArgs {
    #[arg(long, value_enum)]
    example: OracleName,
    #[arg(long = "K", default_value_t = 1.0)]
    strike: f64,
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    mu: f64,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.15)]
    phi: f64,
    #[arg(long, default_value_t = 1.0)]
    barrier: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args, Serialize)]
struct McArgs {
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 1e-2)]
    dt: f64,
    /// Simulation horizon; 40 / beta when absent.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl McArgs {
    fn settings(&self) -> McSettings {
        McSettings {
            n_paths: self.paths,
            dt: self.dt,
            horizon: self.horizon,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Start point; the interval anchor when absent.
    #[arg(long)]
    x: Option<f64>,
    /// Evaluate the rule "stop at the first event with X >= threshold".
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    mc: McArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct TransformArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Scale function anchor; the interval anchor when absent.
    #[arg(long)]
    anchor: Option<f64>,
    #[arg(long, default_value_t = 201)]
    points: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Suite {
    Shape,
    Growth,
}

#[derive(Debug, Args, Serialize)]
struct CheckArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    /// Randomized cases per shape sub-suite.
    #[arg(long, default_value_t = 20)]
    cases: usize,
    #[arg(long, default_value_t = 2001)]
    grid_nodes: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Paths for the growth suite.
    #[arg(long, default_value_t = 2000)]
    paths: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ValidateArgs {
    /// Problem file or bundled name.
    target: Option<String>,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Failure {
        Failure { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::usage(e.to_string())
    }
}

type CliResult = Result<i32, Failure>;

/// Parses `argv` (program name first) and runs the subcommand, returning the
/// exit code. Errors are reported on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Oracle(a) => oracle(a),
        Command::Simulate(a) => simulate(a),
        Command::Transform(a) => transform(a),
        Command::Classify(a) => classify(a),
        Command::Check(a) => check(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load(spec: &str) -> Result<ProblemSpec, Failure> {
    let path = std::path::Path::new(spec);
    if path.exists() {
        return ProblemSpec::load(path).map_err(|e| Failure::usage(e.to_string()));
    }
    match bundled(spec) {
        Some(p) => p.map_err(|e| Failure::usage(e.to_string())),
        None => Err(Failure::usage(format!(
            "no problem file or bundled example named {spec:?} (bundled: {})",
            bundled_names().collect::<Vec<_>>().join(", ")
        ))),
    }
}

impl ProblemArgs {
    fn load(&self) -> Result<ProblemSpec, Failure> {
        match (&self.problem, &self.example) {
            (Some(path), _) => ProblemSpec::load(path).map_err(|e| Failure::usage(e.to_string())),
            (None, Some(name)) => load(name),
            (None, None) => Err(Failure::usage("one of --problem or --example is required")),
        }
    }
}

fn problem_json(p: &ProblemSpec) -> Value {
    p.to_json().ok().and_then(|s| serde_json::from_str(&s).ok()).unwrap_or(Value::Null)
}

fn solver_failure(e: SolverError) -> Failure {
    let code = if matches!(e, SolverError::Assumptions(_)) { EXIT_VALIDATION } else { EXIT_USAGE };
    Failure { code, message: e.to_string() }
}

fn build_grid(p: &ProblemSpec, g: &GridArgs) -> Result<Grid, Failure> {
    let spacing = g.grid.map(|k| match k {
        GridKind::Log => Spacing::Logarithmic,
        GridKind::Uniform => Spacing::Uniform,
    });
    let grid = match (g.lo, g.hi) {
        (None, None) => Grid::for_problem(p, g.grid_nodes, spacing),
        (lo, hi) => {
            let auto = Grid::for_problem(p, g.grid_nodes, spacing).map_err(|e| Failure::usage(e.to_string()))?;
            let (lo, hi) = (lo.unwrap_or(auto.lo()), hi.unwrap_or(auto.hi()));
            match spacing.unwrap_or(Spacing::Uniform) {
                Spacing::Logarithmic => Grid::logarithmic(lo, hi, g.grid_nodes),
                _ => Grid::uniform(lo, hi, g.grid_nodes),
            }
        }
    };
    grid.map_err(|e| Failure::usage(e.to_string()))
}

fn solve(a: &SolveArgs) -> CliResult {
    let p = a.problem.load()?;
    let out = Output::new(a.out.out.as_deref(), a.out.format)?;
    let grid = build_grid(&p, &a.grid)?;
    let settings = SolverSettings {
        tol: a.tol,
        max_iterations: a.max_iterations,
        rate_cap: a.rate_cap,
        scheme: match a.scheme {
            Scheme::Plain => IterationScheme::Plain,
            Scheme::Accelerated => IterationScheme::Accelerated { warmup: a.warmup },
        },
        validation: if a.acknowledge { Validation::Acknowledge } else { Validation::Require },
        ..Default::default()
    };
    let (v, report) = value_iteration(&p, &grid, &settings).map_err(solver_failure)?;
    let h = conditional_value(&p, &v).map_err(solver_failure)?;
    let res = residual(&p, &v).ok();
    let mut table = Table::new(&["x", "V", "g", "psi", "H"]);
    for ((&x, &vx), &hx) in v.nodes().iter().zip(v.values()).zip(h.values()) {
        let g = p.payoff_at(x).unwrap_or(f64::NAN);
        let psi = p.psi(x).unwrap_or(f64::NAN);
        table.push(vec![x, vx, g, psi, hx]);
    }
    let summary = json!({
        "command": "solve",
        "config": {"args": a, "problem": problem_json(&p), "solver": settings, "grid": {"nodes": grid.len(), "lo": grid.lo(), "hi": grid.hi(), "spacing": format!("{:?}", grid.spacing())}},
        "report": {
            "iterations": report.iterations,
            "converged": report.converged,
            "final_increment": report.increments.last(),
            "policy_steps": report.policy_steps,
            "worst_decrease": report.worst_decrease(),
            "rate_cap": report.rate_cap,
            "upwind_nodes": report.upwind_nodes,
            "residual": res,
            "warnings": report.warnings,
        }
    });
    out.emit("solve", &table, summary)?;
    Ok(if report.converged { EXIT_OK } else { EXIT_ASSERTION })
}

fn oracle(a: &OracleArgs) -> CliResult {
    let out = Output::new(a.out.out.as_deref(), a.out.format)?;
    let err = |e: crate::analytic::AnalyticError| Failure::usage(e.to_string());
    let (oracle, range, log, details): (Box<dyn Oracle>, (f64, f64), bool, Value) = match a.example {
        OracleName::Dw => {
            let s = dw_solution(a.strike, a.sigma, a.mu, a.beta, a.lambda).map_err(err)?;
            let d = json!({"threshold": s.threshold, "limit_threshold": s.limit_threshold, "alpha_plus": s.alpha_plus, "alpha_minus": s.alpha_minus, "rho": s.rho, "kappa": s.kappa});
            (Box::new(s), (0.02 * a.strike, 50.0 * a.strike), true, d)
        }
        OracleName::American => {
            crate::analytic::american_value(a.strike, a.sigma, a.mu, a.beta, a.strike).map_err(err)?;
            let o = AmericanCall { strike: a.strike, sigma: a.sigma, mu: a.mu, beta: a.beta };
            (Box::new(o), (0.02 * a.strike, 50.0 * a.strike), true, Value::Null)
        }
        OracleName::Linear => {
            crate::analytic::linear_payoff_value(1.0, a.mu, a.beta, a.lambda).map_err(err)?;
            let o = LinearPayoff { mu: a.mu, beta: a.beta, lambda: a.lambda };
            (Box::new(o), (0.01, 100.0), true, json!({"rho": a.lambda / (a.lambda + a.beta - a.mu)}))
        }
        OracleName::Barrier => {
            crate::analytic::barrier_rate_value(a.barrier, a.barrier, a.sigma, a.mu, a.beta).map_err(err)?;
            let o = BarrierRate { barrier: a.barrier, sigma: a.sigma, mu: a.mu, beta: a.beta };
            (Box::new(o), (0.01 * a.barrier, 4.0 * a.barrier), false, Value::Null)
        }
        OracleName::Sinh => {
            let s = sinh_drift_solution(a.beta).map_err(err)?;
            let d = json!({"boundary": s.boundary});
            let hi = 3.0 * s.boundary;
            (Box::new(s), (0.0, hi), false, d)
        }
        OracleName::HPhi => {
            let o = LocalTimeExample::new(a.phi, a.lambda).map_err(err)?;
            let d = json!({"phi_threshold": o.threshold()});
            (Box::new(o), (-3.0, 3.0), false, d)
        }
        OracleName::Nonequality => {
            crate::analytic::nonequality_values(0.0, a.beta).map_err(err)?;
            (Box::new(NonEquality { beta: a.beta }), (0.0, 3.0), false, Value::Null)
        }
    };
    let (lo, hi) = (a.grid.lo.unwrap_or(range.0), a.grid.hi.unwrap_or(range.1));
    let log = match a.grid.grid {
        Some(GridKind::Log) => true,
        Some(GridKind::Uniform) => false,
        None => log,
    };
    let grid = if log { Grid::logarithmic(lo, hi, a.grid.grid_nodes) } else { Grid::uniform(lo, hi, a.grid.grid_nodes) }
        .map_err(|e| Failure::usage(e.to_string()))?;
    let mut table = Table::new(&["x", "value", "payoff", "psi"]);
    for &x in grid.nodes() {
        table.push(vec![x, oracle.value(x), oracle.payoff(x), oracle.psi(x)]);
    }
    let summary = json!({"command": "oracle", "config": a, "details": details});
    out.emit("oracle", &table, summary)?;
    Ok(EXIT_OK)
}

fn mc_failure(e: McError) -> Failure {
    let code = if matches!(e, McError::Assumptions(_)) { EXIT_VALIDATION } else { EXIT_USAGE };
    Failure { code, message: e.to_string() }
}

fn simulate(a: &SimulateArgs) -> CliResult {
    let p = a.problem.load()?;
    let s = a.mc.settings();
    let x = a.x.unwrap_or_else(|| p.interval().anchor());
    let config = json!({"args": a, "problem": problem_json(&p), "mc": s, "x": x});
    let doc = match a.threshold {
        Some(l) => {
            let e = evaluate_policy(&p, l, x, &s).map_err(mc_failure)?;
            json!({"command": "simulate", "config": config, "estimator": "threshold_policy", "threshold": l,
                "estimate": e.mean, "std_error": e.std_error, "n_paths": e.n_paths, "seed": s.seed, "flags": e.flags, "detail": e})
        }
        None => {
            let g = estimate_g(&p, x, &s).map_err(mc_failure)?;
            let mut flags = g.direct.flags.clone();
            if !g.agree(3.0) {
                flags.push("direct and time-changed estimates differ by more than 3 combined standard errors".into());
            }
            json!({"command": "simulate", "config": config, "estimator": "first_arrival",
                "estimate": g.direct.mean, "std_error": g.direct.std_error, "n_paths": g.direct.n_paths, "seed": s.seed, "flags": flags,
                "time_changed": g.time_changed, "direct": g.direct})
        }
    };
    output::emit_json(a.out.as_deref(), "simulate", &doc)?;
    Ok(EXIT_OK)
}

fn transform(a: &TransformArgs) -> CliResult {
    let p = a.problem.load()?;
    let out = Output::new(a.out.out.as_deref(), a.out.format)?;
    let anchor = a.anchor.unwrap_or_else(|| p.interval().anchor());
    let map = scale_function(&p.diffusion, anchor).map_err(|e| Failure::usage(e.to_string()))?;
    if a.points < 2 {
        return Err(Failure::usage("--points must be at least 2"));
    }
    let mut table = Table::new(&["x", "s", "s_prime"]);
    for x in p.interval().probe_points(a.points) {
        table.push(vec![x, map.s(x), map.s_prime(x)]);
    }
    let (lo, hi) = map.image();
    let kotani = kotani_check(&p).ok();
    let summary = json!({
        "command": "transform",
        "config": {"args": a, "problem": problem_json(&p), "anchor": anchor},
        "image": [lo, hi],
        "ends": [map.end(Side::Left), map.end(Side::Right)],
        "natural_scale": p.diffusion.is_natural_scale(),
        "kotani": kotani,
    });
    out.emit("transform", &table, summary)?;
    Ok(EXIT_OK)
}

fn classify(a: &ProblemArgs) -> CliResult {
    let p = a.load()?;
    let c = classify_diffusion(&p.diffusion).map_err(|e| Failure::usage(e.to_string()))?;
    let doc = json!({"command": "classify", "config": {"args": a, "problem": problem_json(&p)}, "endpoints": c});
    output::emit_json(None, "classify", &doc)?;
    Ok(EXIT_OK)
}

fn check(a: &CheckArgs) -> CliResult {
    match a.suite {
        Suite::Shape => {
            let settings = SuiteSettings {
                grid_nodes: a.grid_nodes,
                ..Default::default()
            };
            let report = verify_shape_theorems(&standard_suite(a.cases, a.seed), &settings).map_err(|e| Failure::usage(e.to_string()))?;
            let doc = json!({"command": "check", "config": a, "report": report});
            output::emit_json(a.out.as_deref(), "check", &doc)?;
            Ok(if report.passed { EXIT_OK } else { EXIT_ASSERTION })
        }
        Suite::Growth => {
            let rows = growth_suite(a.paths, a.seed)?;
            let passed = rows.iter().all(|r| r["as_expected"] == Value::Bool(true));
            let doc = json!({"command": "check", "config": a, "report": {"cases": rows, "passed": passed}});
            output::emit_json(a.out.as_deref(), "check", &doc)?;
            Ok(if passed { EXIT_OK } else { EXIT_ASSERTION })
        }
    }
}

fn growth_suite(paths: usize, seed: u64) -> Result<Vec<Value>, Failure> {
    use crate::model::{Diffusion, ScalarFunction};
    let parse = |s: &str| ScalarFunction::parse(s).expect("fixed expression");
    let bm = || Diffusion::brownian(1.0, 0.0, Interval::real_line());
    let cases = [
        ("bounded", ProblemSpec::new(bm(), parse("1/(1 + x*x)"), ScalarFunction::constant(1.0), 0.5), true),
        ("exponential_bm_linear", ProblemSpec::new(Diffusion::exponential_bm(0.2, 0.05), parse("x"), ScalarFunction::constant(1.0), 0.1), true),
        ("super_exponential", ProblemSpec::new(bm(), parse("exp(x*x)"), ScalarFunction::constant(1.0), 0.5), false),
    ];
    let mut rows = Vec::new();
    for (name, p, expect_holds) in cases {
        let p = p.expect("fixed problem");
        let s = GrowthSettings::for_problem(&p, paths, seed);
        let r = growth_condition_check_with(&p, &s).map_err(|e| Failure::usage(e.to_string()))?;
        let holds = r.verdict == GrowthVerdict::Holds;
        rows.push(json!({"name": name, "expected_holds": expect_holds, "as_expected": holds == expect_holds, "report": r}));
    }
    Ok(rows)
}

fn validate(a: &ValidateArgs) -> CliResult {
    let p = match &a.target {
        Some(t) => load(t)?,
        None => a.problem.load()?,
    };
    let report = validate_problem(&p);
    let passed = report.passed();
    let doc = json!({"command": "validate", "config": {"args": a, "problem": problem_json(&p)}, "passed": passed, "report": report});
    output::emit_json(a.out.as_deref(), "validate", &doc)?;
    if !passed {
        for f in report.failures() {
            eprintln!("assumption failed: {:?} ({}): {}", f.assumption, f.check, f.detail);
        }
    }
    Ok(if passed { EXIT_OK } else { EXIT_VALIDATION })
}
