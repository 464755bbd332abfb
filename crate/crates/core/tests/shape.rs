use poisson_stop::analytic::{barrier_rate_value, dw_solution, dw_value, sinh_drift_value, LocalTimeExample};
use poisson_stop::model::{bundled, Diffusion, Interval, ProblemSpec, ScalarFunction};
use poisson_stop::shape::*;
use poisson_stop::solver::{Grid, ValueFunction};
use proptest::prelude::*;

fn sampled(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> ValueFunction {
    ValueFunction::from_fn(&Grid::uniform(lo, hi, n).unwrap(), f)
}

fn example(name: &str) -> ProblemSpec {
    bundled(name).unwrap().unwrap()
}

#[test]
fn constant_is_monotone() {
    assert!(check_monotone(&sampled(0.0, 1.0, 50, |_| 3.0), 0.0).unwrap().holds());
}

#[test]
fn first_arrival_call_value_is_increasing() {
    let sol = dw_solution(1.0, 0.2, 0.05, 0.1, 1.0).unwrap();
    let v = sampled(0.05, 5.0, 1000, |x| dw_value(&sol, x));
    assert!(check_monotone(&v, ORACLE_TOL).unwrap().holds());
}

#[test]
fn barrier_rate_value_is_not_monotone() {
    let v = sampled(0.0, 4.0, 1001, |x| barrier_rate_value(x, 1.0, 2f64.sqrt(), 0.0, 2.0).unwrap());
    let r = check_monotone(&v, ORACLE_TOL).unwrap();
    assert_eq!(r.verdict, Verdict::Fails);
    let w = r.witness.unwrap();
    assert!(w.nodes[0] <= 1.0 && w.nodes[1] >= 1.0, "{w:?}");
}

#[test]
fn linear_is_convex_and_concave() {
    let v = sampled(-2.0, 5.0, 300, |x| 4.0 - 0.7 * x);
    assert!(check_convex(&v, 0.0).unwrap().holds());
    assert!(check_concave(&v, 0.0).unwrap().holds());
}

#[test]
fn local_time_example_convexity_threshold() {
    let at = |phi: f64| {
        let ex = LocalTimeExample::new(phi, 2.0).unwrap();
        check_convex(&sampled(-3.0, 3.0, 2001, |x| ex.big_h(x)), ORACLE_TOL).unwrap()
    };
    assert!(at(1.15).holds());
    let r = at(1.20);
    assert_eq!(r.verdict, Verdict::Fails);
    assert!(r.witness.unwrap().nodes[1].abs() < 0.01);
    let star = LocalTimeExample::new(1.0, 2.0).unwrap().threshold();
    assert!(1.15 < star && star < 1.20);
}

#[test]
fn drifted_value_is_neither_convex_nor_concave() {
    let (_, y) = sinh_drift_value(1.0, 0.5).unwrap();
    let v = sampled(0.0, 2.0 * y, 1000, |x| sinh_drift_value(x, 0.5).unwrap().0);
    let convex = check_convex(&v, ORACLE_TOL).unwrap();
    let concave = check_concave(&v, ORACLE_TOL).unwrap();
    assert!(convex.witness.is_some() && concave.witness.is_some());
}

#[test]
fn monotone_hypotheses_give_monotone_limits() {
    let r = verify_shape_theorems(&monotone_suite(20, 3), &SuiteSettings::default()).unwrap();
    assert!(r.passed, "{:#?}", r.cases.iter().filter(|c| !c.passed()).collect::<Vec<_>>());
    for c in &r.cases {
        let o = c.outcome(Theorem::Monotone).expect("hypotheses hold");
        assert!(o.asserted && o.holds, "{}", c.name);
    }
}

#[test]
fn convex_hypotheses_give_convex_limits() {
    let r = verify_shape_theorems(&convex_suite(20, 4), &SuiteSettings::default()).unwrap();
    assert!(r.passed, "{:#?}", r.cases.iter().filter(|c| !c.passed()).collect::<Vec<_>>());
    for c in &r.cases {
        let o = c.outcome(Theorem::Convex).expect("hypotheses hold");
        assert!(o.asserted && o.holds && o.detail.is_none(), "{}", c.name);
    }
}

#[test]
fn constant_effective_payoff_is_fixed_after_one_sweep() {
    let r = verify_shape_theorems(&[ShapeCase::new(example("psi_half"), [Claim::PsiConvex, Claim::PsiConcave])], &SuiteSettings::default())
        .unwrap();
    let c = &r.cases[0];
    assert!(c.passed());
    for t in [Theorem::Convex, Theorem::Concave] {
        assert!(c.outcome(t).unwrap().holds);
    }
    assert!(c.hypotheses.theta_increasing == Hyp::Fails);
    assert!(c.outcome(Theorem::MonotoneDecreasingRate).is_some_and(|o| !o.asserted));
}

#[test]
fn driftless_call_limit_is_convex() {
    let r = verify_shape_theorems(&[ShapeCase::new(example("eg2_3"), [Claim::NaturalScale, Claim::Kotani, Claim::PsiConvex])], &SuiteSettings::default())
        .unwrap();
    assert!(r.cases[0].outcome(Theorem::Convex).unwrap().holds);
}

#[test]
fn counterexamples_fail_hypotheses_and_shape() {
    let cases = [ShapeCase::new(example("eg2_2"), []), ShapeCase::new(example("eg2_4"), [])];
    let r = verify_shape_theorems(&cases, &SuiteSettings::default()).unwrap();
    assert!(r.passed);

    let drifted = r.case("eg2_2").unwrap();
    assert!(!drifted.hypotheses.natural_scale);
    assert!(drifted.outcome(Theorem::Convex).is_none() && drifted.outcome(Theorem::Concave).is_none());
    for p in [Property::Convex, Property::Concave] {
        let o = drifted.observed(p).unwrap();
        assert_eq!(o.verdict, Verdict::Fails);
        assert!(o.witness.is_some());
    }

    let barrier = r.case("eg2_4").unwrap();
    assert_eq!(barrier.hypotheses.theta_increasing, Hyp::Fails);
    assert!(barrier.outcome(Theorem::Monotone).is_none());
    let o = barrier.observed(Property::MonotoneIncreasing).unwrap();
    let w = o.witness.as_ref().unwrap();
    assert!(w.nodes[0] <= 1.0 && w.nodes[1] >= 1.0, "{w:?}");
}

#[test]
fn false_claims_are_rejected() {
    let err = verify_shape_theorems(&[ShapeCase::new(example("eg2_4"), [Claim::ThetaIncreasing])], &SuiteSettings::default()).unwrap_err();
    assert!(matches!(err, ShapeError::AnnotationMismatch { claim: Claim::ThetaIncreasing, witness: Some(_), .. }));
    let err = verify_shape_theorems(&[ShapeCase::new(example("eg2_2"), [Claim::NaturalScale])], &SuiteSettings::default()).unwrap_err();
    assert!(matches!(err, ShapeError::AnnotationMismatch { claim: Claim::NaturalScale, .. }));
}

#[test]
fn violations_inside_the_band_are_borderline() {
    let p = ProblemSpec::new(
        Diffusion::brownian(1.0, 0.0, Interval::real_line()),
        ScalarFunction::parse("2 + x/(1 + x*x)*1e-9 + 0.1*max(x, 0)").unwrap(),
        ScalarFunction::constant(1.0),
        0.5,
    )
    .unwrap();
    let h = detect_hypotheses(&p, &SuiteSettings::default()).unwrap();
    assert_eq!(h.psi_increasing, Hyp::Borderline);
    assert!(h.borderline());
    let r = verify_shape_theorems(&[ShapeCase::new(p, [])], &SuiteSettings::default()).unwrap();
    assert!(r.cases[0].outcome(Theorem::Monotone).is_none());
}

#[test]
fn bounded_payoff_holds_without_simulation() {
    let p = ProblemSpec::new(
        Diffusion::brownian(1.0, 0.0, Interval::real_line()),
        ScalarFunction::parse("1/(1 + x*x)").unwrap(),
        ScalarFunction::constant(1.0),
        0.5,
    )
    .unwrap();
    let r = growth_condition_check(&p, &[0.0, 1.0], 100, 1).unwrap();
    assert_eq!(r.verdict, GrowthVerdict::Holds);
    assert!(r.rows.is_empty());
    assert!((r.payoff_bound.unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn exponential_bm_growth_decays() {
    let p = ProblemSpec::new(Diffusion::exponential_bm(0.2, 0.05), ScalarFunction::parse("x").unwrap(), ScalarFunction::constant(1.0), 0.1).unwrap();
    assert!(payoff_bound(&p).is_none());
    let s = GrowthSettings::for_problem(&p, 2000, 42);
    let r = growth_condition_check_with(&p, &s).unwrap();
    assert_eq!(r.verdict, GrowthVerdict::Holds, "{}", r.reason);
    assert!(r.rows.windows(2).all(|w| w[1].estimate <= w[0].estimate));
}

#[test]
fn super_exponential_payoff_is_not_certified() {
    let p = ProblemSpec::new(
        Diffusion::brownian(1.0, 0.0, Interval::real_line()),
        ScalarFunction::parse("exp(x*x)").unwrap(),
        ScalarFunction::constant(1.0),
        0.5,
    )
    .unwrap();
    let r = growth_condition_check(&p, &[0.0, 10.0, 20.0, 40.0], 500, 42).unwrap();
    assert_ne!(r.verdict, GrowthVerdict::Holds, "{r:?}");
}

proptest! {
    #[test]
    fn affine_inputs_pass_both_curvature_checks(slope in -1e3f64..1e3, icpt in -1e3f64..1e3, lo in -10f64..0.0, gaps in prop::collection::vec(1e-3f64..1.0, 3..60)) {
        let mut xs = vec![lo];
        for g in &gaps {
            let x = xs.last().unwrap() + g;
            xs.push(x);
        }
        let ys: Vec<f64> = xs.iter().map(|x| slope * x + icpt).collect();
        prop_assert!(convex_on(&xs, &ys, 0.0).unwrap().holds());
        prop_assert!(concave_on(&xs, &ys, 0.0).unwrap().holds());
    }

    #[test]
    fn sorted_values_are_monotone_and_reversal_fails(mut ys in prop::collection::vec(-1e3f64..1e3, 2..50)) {
        ys.sort_by(f64::total_cmp);
        let n = ys.len();
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        prop_assert!(monotone_on(&xs, &ys, 0.0).unwrap().holds());
        let rev: Vec<f64> = ys.iter().rev().copied().collect();
        let r = monotone_on(&xs, &rev, 1e-6).unwrap();
        prop_assert_eq!(r.holds(), ys[n - 1] - ys[0] <= 1e-6 * ys.iter().fold(0.0f64, |m, y| m.max(y.abs())) + 1e-9);
    }

    #[test]
    fn failing_verdicts_carry_witnesses(ys in prop::collection::vec(-1.0f64..1.0, 3..40)) {
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
        for r in [monotone_on(&xs, &ys, 1e-6).unwrap(), convex_on(&xs, &ys, 1e-6).unwrap(), concave_on(&xs, &ys, 1e-6).unwrap()] {
            prop_assert_eq!(r.holds(), r.witness.is_none());
        }
    }
}
