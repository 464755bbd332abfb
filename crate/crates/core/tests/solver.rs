use poisson_stop::analytic::{
    american_value, barrier_rate_value, dw_solution, dw_value, linear_payoff_value, nonequality_values,
    sinh_drift_solution, Oracle,
};
use poisson_stop::model::{Diffusion, EndpointKind, Interval, ProblemSpec, ScalarFunction, Status};
use poisson_stop::solver::{
    conditional_value, g_operator, residual, value_iteration, BoundaryPolicy, Grid, IterationScheme, SolverSettings,
    ValueFunction,
};

fn example(name: &str) -> ProblemSpec {
    ProblemSpec::load(format!("{}/examples/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn dw_problem(sigma: f64, mu: f64, beta: f64, lambda: f64) -> ProblemSpec {
    ProblemSpec::new(
        Diffusion::exponential_bm(sigma, mu),
        ScalarFunction::parse("max(x - 1, 0)").unwrap(),
        ScalarFunction::constant(lambda),
        beta,
    )
    .unwrap()
}

#[test]
fn dw_matches_closed_form() {
    let p = example("dw");
    let grid = Grid::logarithmic(0.02, 50.0, 4001).unwrap();
    let (v, r) = value_iteration(&p, &grid, &SolverSettings::default()).unwrap();
    assert!(r.converged);
    let sol = dw_solution(1.0, 0.2, 0.05, 0.1, 1.0).unwrap();
    let err = v.sup_error_on(|x| dw_value(&sol, x), 0.1, 3.0);
    assert!(err < 1e-4, "{err}");
    assert!(r.worst_decrease() >= -1e-8);
    assert!(r.residual < 1e-6, "{}", r.residual);
}

#[test]
fn first_sweep_is_first_arrival_value() {
    let p = example("dw");
    let grid = Grid::logarithmic(0.02, 50.0, 501).unwrap();
    let s = SolverSettings {
        max_iterations: 1,
        ..Default::default()
    };
    let (v1, _) = value_iteration(&p, &grid, &s).unwrap();
    let g = g_operator(&p, &p.payoff, &grid, &BoundaryPolicy::default()).unwrap();
    assert_eq!(v1.values(), g.values());
}

#[test]
fn grid_refinement_is_second_order() {
    let p = dw_problem(0.2, 0.05, 0.1, 1.0);
    let sol = dw_solution(1.0, 0.2, 0.05, 0.1, 1.0).unwrap();
    let err = |n: usize| {
        let grid = Grid::logarithmic(0.02, 50.0, n).unwrap();
        let (v, _) = value_iteration(&p, &grid, &SolverSettings::default()).unwrap();
        // away from the kink at the threshold
        v.sup_error_on(|x| dw_value(&sol, x), 0.1, 0.9 * sol.threshold)
            .max(v.sup_error_on(|x| dw_value(&sol, x), 1.1 * sol.threshold, 3.0))
    };
    let (coarse, fine) = (err(501), err(1001));
    assert!(coarse / fine >= 2.0, "{coarse} -> {fine}");
}

#[test]
fn more_opportunities_never_hurt() {
    let grid = Grid::logarithmic(0.02, 50.0, 1001).unwrap();
    let solve = |lambda| value_iteration(&dw_problem(0.2, 0.05, 0.1, lambda), &grid, &SolverSettings::default()).unwrap().0;
    let (lo, hi) = (solve(0.5), solve(2.0));
    for (a, b) in lo.values().iter().zip(hi.values()) {
        assert!(*a <= b + 2e-8);
    }
}

#[test]
fn accelerated_scheme_reaches_american_limit() {
    let p = dw_problem(0.2, 0.05, 0.1, 1e4);
    let grid = Grid::logarithmic(0.02, 50.0, 4001).unwrap();
    let s = SolverSettings {
        scheme: IterationScheme::Accelerated { warmup: 50 },
        ..Default::default()
    };
    let (v, r) = value_iteration(&p, &grid, &s).unwrap();
    assert!(r.converged && r.policy_steps > 0);
    let err = v.sup_error_on(|x| american_value(1.0, 0.2, 0.05, 0.1, x).unwrap(), 0.1, 3.0);
    assert!(err < 5e-4, "{err}");
}

#[test]
fn accelerated_and_plain_agree() {
    let p = dw_problem(0.2, 0.05, 0.1, 1.0);
    let grid = Grid::logarithmic(0.02, 50.0, 801).unwrap();
    let (a, _) = value_iteration(&p, &grid, &SolverSettings::default()).unwrap();
    let s = SolverSettings {
        scheme: IterationScheme::Accelerated { warmup: 5 },
        ..Default::default()
    };
    let (b, _) = value_iteration(&p, &grid, &s).unwrap();
    let d = a.sup_error_on(|x| b.eval(x), 0.0, f64::INFINITY);
    assert!(d < 1e-7, "{d}");
}

#[test]
fn constant_effective_payoff_is_a_fixed_point() {
    let p = example("psi_half");
    let grid = Grid::for_problem(&p, 2001, None).unwrap();
    let (v, r) = value_iteration(&p, &grid, &SolverSettings::default()).unwrap();
    assert!(r.increments[1] <= 1e-8);
    assert!(v.sup_error_on(|_| 0.5, f64::NEG_INFINITY, f64::INFINITY) < 1e-6);
}

#[test]
fn linear_payoff_closed_form_and_residual() {
    let (mu, beta, lambda) = (0.03, 0.1, 0.7);
    let p = ProblemSpec::new(
        Diffusion::exponential_bm(0.25, mu),
        ScalarFunction::parse("x").unwrap(),
        ScalarFunction::constant(lambda),
        beta,
    )
    .unwrap();
    let grid = Grid::for_problem(&p, 2001, None).unwrap();
    let (v, _) = value_iteration(&p, &grid, &SolverSettings::default()).unwrap();
    for x in [0.5, 1.0, 2.0, 5.0, 10.0] {
        let exact = linear_payoff_value(x, mu, beta, lambda).unwrap();
        assert!(((v.eval(x) - exact) / exact).abs() < 1e-5, "{x}");
    }
    let exact = ValueFunction::from_fn(&grid, |x| linear_payoff_value(x, mu, beta, lambda).unwrap());
    assert!(residual(&p, &exact).unwrap() < 1e-9);
}

#[test]
fn oracle_residual_is_small_away_from_threshold() {
    let p = dw_problem(0.2, 0.05, 0.1, 1.0);
    let sol = dw_solution(1.0, 0.2, 0.05, 0.1, 1.0).unwrap();
    let grid = Grid::logarithmic(0.02, 50.0, 4001).unwrap();
    let exact = ValueFunction::from_fn(&grid, |x| sol.value(x));
    assert!(residual(&p, &exact).unwrap() <= 1e-2 * 0.1);
    let zero = ProblemSpec::new(
        Diffusion::exponential_bm(0.2, 0.0),
        ScalarFunction::constant(0.0),
        ScalarFunction::constant(1.0),
        0.1,
    )
    .unwrap();
    assert_eq!(residual(&zero, &ValueFunction::from_fn(&grid, |_| 0.0)).unwrap(), 0.0);
}

#[test]
fn conditional_value_switches_at_threshold() {
    let p = dw_problem(0.2, 0.05, 0.1, 1.0);
    let sol = dw_solution(1.0, 0.2, 0.05, 0.1, 1.0).unwrap();
    let grid = Grid::logarithmic(0.02, 50.0, 1001).unwrap();
    let v = ValueFunction::from_fn(&grid, |x| sol.value(x));
    let h = conditional_value(&p, &v).unwrap();
    for ((&x, &hv), &vv) in grid.nodes().iter().zip(h.values()).zip(v.values()) {
        if x < sol.threshold * 0.999 {
            assert_eq!(hv, vv);
        } else if x > sol.threshold * 1.001 {
            assert_eq!(hv, x - 1.0);
        }
    }
}

#[test]
fn bounded_above_by_unconstrained_value() {
    let p = example("eg2_2");
    let grid = Grid::for_problem(&p, 2001, None).unwrap();
    let (v, _) = value_iteration(&p, &grid, &SolverSettings::default()).unwrap();
    let w = sinh_drift_solution(0.5).unwrap();
    for (&x, &val) in grid.nodes().iter().zip(v.values()) {
        if x <= 8.0 {
            assert!(val <= w.value(x) + 2e-8 + 1e-3 * x, "{x}: {val} > {}", w.value(x));
        }
    }
}

#[test]
fn barrier_rate_within_cap_tolerance() {
    let p = example("eg2_4");
    let grid = Grid::for_problem(&p, 2001, None).unwrap();
    let (v, r) = value_iteration(&p, &grid, &SolverSettings::default()).unwrap();
    assert!(r.converged);
    for x in [0.2, 0.5, 1.5, 2.0, 4.0] {
        let exact = barrier_rate_value(x, 1.0, 2f64.sqrt(), 0.0, 2.0).unwrap();
        assert!(((v.eval(x) - exact) / exact).abs() < 0.02, "{x}: {} vs {exact}", v.eval(x));
    }
    assert!(v.values().iter().all(|&u| u >= 0.0));
}

#[test]
fn singular_rate_warns_and_iterates_stay_small() {
    let p = example("eg2_5");
    let grid = Grid::for_problem(&p, 2001, None).unwrap();
    let s = SolverSettings {
        max_iterations: 50,
        ..Default::default()
    };
    let (v, r) = value_iteration(&p, &grid, &s).unwrap();
    assert_eq!(r.rate_assumption, Some(Status::Fail));
    assert!(r.rate_assumption_failed());
    assert!(!r.warnings.is_empty());
    let exact = nonequality_values(0.5, 1.0).unwrap();
    assert!(v.eval(0.5) < 0.05);
    assert!(exact.value - v.eval(0.5) >= 0.1);
    assert!((v.values()[0] - 0.5).abs() < 1e-12);
}

#[test]
fn failed_assumptions_are_errors_unless_acknowledged() {
    let iv = Interval::with_kinds(0.0, 1.0, EndpointKind::Absorbing, EndpointKind::Absorbing).unwrap();
    let p = ProblemSpec::new(
        Diffusion::new(ScalarFunction::parse("x*(1-x)").unwrap(), ScalarFunction::constant(0.0), iv),
        ScalarFunction::parse("x").unwrap(),
        ScalarFunction::constant(1.0),
        1.0,
    )
    .unwrap();
    let grid = Grid::uniform(0.0, 1.0, 101).unwrap();
    assert!(value_iteration(&p, &grid, &SolverSettings::default()).is_err());
    let s = SolverSettings {
        validation: poisson_stop::solver::Validation::Acknowledge,
        ..Default::default()
    };
    let (_, r) = value_iteration(&p, &grid, &s).unwrap();
    assert!(!r.warnings.is_empty());
}

#[test]
fn power_law_ends_are_exact_for_linear_payoff() {
    let (mu, beta, lambda) = (0.0, 0.1, 1.0);
    let p = ProblemSpec::new(
        Diffusion::exponential_bm(0.3, mu),
        ScalarFunction::parse("x").unwrap(),
        ScalarFunction::constant(lambda),
        beta,
    )
    .unwrap();
    let grid = Grid::logarithmic(0.1, 10.0, 201).unwrap();
    let policy = BoundaryPolicy {
        left: Some(poisson_stop::solver::BoundaryCondition::PowerLaw { exponent: 1.0 }),
        right: Some(poisson_stop::solver::BoundaryCondition::PowerLaw { exponent: 1.0 }),
    };
    let s = SolverSettings {
        boundary: policy,
        ..Default::default()
    };
    let (v, _) = value_iteration(&p, &grid, &s).unwrap();
    assert!((v.eval(20.0) - 20.0 * lambda / (lambda + beta)).abs() < 1e-6);
}
