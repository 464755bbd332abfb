use poisson_stop::analytic::{dw_solution, dw_value, linear_payoff_value};
use poisson_stop::mc::{
    doeblin_couple, estimate_g, evaluate_policy, simulate_paths, thin_events, McSettings, SpaceTimeMarks, StepScheme,
};
use poisson_stop::model::{Diffusion, EndpointKind, Interval, ProblemSpec, ScalarFunction};
use poisson_stop::solver::{g_operator, BoundaryPolicy, Grid};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn example(name: &str) -> ProblemSpec {
    ProblemSpec::load(format!("{}/examples/{name}.json", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Asymptotic two-sample Kolmogorov-Smirnov p-value.
fn ks_p_value(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += term;
    }
    p.clamp(0.0, 1.0)
}

#[test]
fn frozen_coefficients_give_constant_paths() {
    let d = Diffusion::brownian(0.0, 0.0, Interval::real_line());
    let b = simulate_paths(&d, 1.5, 0.1, 1.0, 20, 1).unwrap();
    assert!(b.paths.iter().flatten().all(|&x| x == 1.5));
}

#[test]
fn brownian_moments() {
    let d = Diffusion::brownian(1.0, 0.0, Interval::real_line());
    let n = 100_000;
    let b = simulate_paths(&d, 0.3, 0.01, 1.0, n, 11).unwrap();
    assert!(matches!(b.scheme, StepScheme::Brownian { .. }));
    let (m, v) = mean_var(&b.at_step(b.steps));
    assert!((m - 0.3).abs() <= 4.0 / (n as f64).sqrt(), "{m}");
    assert!((v - 1.0).abs() <= 0.1, "{v}");
}

#[test]
fn driftless_exponential_bm_is_a_martingale() {
    let d = Diffusion::exponential_bm(0.3, 0.0);
    let n = 100_000;
    let b = simulate_paths(&d, 2.0, 0.05, 2.0, n, 5).unwrap();
    assert!(matches!(b.scheme, StepScheme::Geometric { .. }));
    let (m, v) = mean_var(&b.at_step(b.steps));
    assert!((m - 2.0).abs() <= 3.0 * (v / n as f64).sqrt(), "{m}");
}

#[test]
fn euler_paths_freeze_at_absorbing_endpoints() {
    let iv = Interval::with_kinds(0.0, f64::INFINITY, EndpointKind::Absorbing, EndpointKind::Natural).unwrap();
    let d = Diffusion::new(ScalarFunction::parse("1 + 0*x").unwrap(), ScalarFunction::parse("-1 + 0*x").unwrap(), iv);
    let b = simulate_paths(&d, 0.2, 0.01, 3.0, 500, 3).unwrap();
    assert_eq!(b.scheme, StepScheme::Euler);
    let mut hit = 0;
    for (p, a) in b.paths.iter().zip(&b.absorbed) {
        assert!(p.iter().all(|&x| x >= 0.0));
        if let Some(k) = a {
            hit += 1;
            assert!(p[*k..].iter().all(|&x| x == 0.0));
        }
    }
    assert!(hit > 400);
}

#[test]
fn zero_rate_gives_no_events() {
    let d = Diffusion::brownian(1.0, 0.0, Interval::real_line());
    let b = simulate_paths(&d, 0.0, 0.01, 5.0, 10, 2).unwrap();
    let marks = SpaceTimeMarks::generate(5.0, 3.0, 2, 0).unwrap();
    let ev = thin_events(b.path(0), b.dt, &ScalarFunction::constant(0.0), &marks).unwrap();
    assert!(ev.is_empty());
}

#[test]
fn constant_rate_event_counts_are_poisson() {
    let d = Diffusion::brownian(1.0, 0.0, Interval::real_line());
    let (n, horizon, lambda) = (10_000, 2.0, 1.5);
    let b = simulate_paths(&d, 0.0, 0.05, horizon, n, 9).unwrap();
    let theta = ScalarFunction::constant(lambda);
    let mut counts = [0usize; 9];
    for i in 0..n {
        let marks = SpaceTimeMarks::generate(horizon, 4.0, 9, i).unwrap();
        let ev = thin_events(b.path(i), b.dt, &theta, &marks).unwrap();
        assert!(ev.windows(2).all(|w| w[0] <= w[1]));
        counts[ev.len().min(8)] += 1;
    }
    let mean = lambda * horizon;
    let mut pmf = vec![(-mean).exp()];
    for k in 1..8 {
        let prev = pmf[k - 1];
        pmf.push(prev * mean / k as f64);
    }
    let tail = 1.0 - pmf.iter().sum::<f64>();
    pmf.push(tail);
    let chi2: f64 = counts
        .iter()
        .zip(&pmf)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let p = 1.0 - ChiSquared::new(8.0).unwrap().cdf(chi2);
    assert!(p > 0.001, "chi2 {chi2}, p {p}");
}

#[test]
fn marks_fill_the_rectangle_uniformly() {
    let m = SpaceTimeMarks::generate(100.0, 50.0, 4, 0).unwrap();
    let n = m.marks.len() as f64;
    assert!((n - 5000.0).abs() < 5.0 * 5000f64.sqrt());
    let (mu, _) = mean_var(&m.marks.iter().map(|p| p.0).collect::<Vec<_>>());
    let (mz, _) = mean_var(&m.marks.iter().map(|p| p.1).collect::<Vec<_>>());
    assert!((mu - 50.0).abs() < 4.0 * 100.0 / (12.0 * n).sqrt());
    assert!((mz - 25.0).abs() < 4.0 * 50.0 / (12.0 * n).sqrt());
    assert!(m.marks.windows(2).all(|w| w[0].0 <= w[1].0));
}

#[test]
fn shared_marks_give_event_inclusion() {
    let d = Diffusion::brownian(1.0, 0.0, Interval::real_line());
    let n = 10_000;
    let b = simulate_paths(&d, 0.0, 0.02, 2.0, n, 21).unwrap();
    let low = ScalarFunction::parse("1/(1 + x*x)").unwrap();
    let high = ScalarFunction::parse("1/(1 + x*x) + 0.5*abs(x)").unwrap();
    for i in 0..n {
        let marks = SpaceTimeMarks::generate(2.0, 8.0, 21, i).unwrap();
        let path = b.path(i);
        if path.iter().any(|x| 1.0 / (1.0 + x * x) + 0.5 * x.abs() > 8.0) {
            continue;
        }
        let e1 = thin_events(path, b.dt, &low, &marks).unwrap();
        let e2 = thin_events(path, b.dt, &high, &marks).unwrap();
        assert!(e1.iter().all(|t| e2.contains(t)), "path {i}");
    }
}

#[test]
fn cap_exceeded_is_reported() {
    let d = Diffusion::brownian(0.0, 0.0, Interval::real_line());
    let b = simulate_paths(&d, 0.0, 0.1, 1.0, 1, 1).unwrap();
    let marks = SpaceTimeMarks::generate(1.0, 1.0, 1, 0).unwrap();
    assert!(thin_events(b.path(0), b.dt, &ScalarFunction::constant(2.0), &marks).is_err());
}

#[test]
fn doeblin_coupling_orders_and_preserves_law() {
    let d = Diffusion::brownian(1.0, 0.2, Interval::real_line());
    let n = 10_000;
    let c = doeblin_couple(&d, -0.5, 0.5, 0.01, 1.0, n, 17).unwrap();
    for i in 0..n {
        let (lo, hi) = (c.lower.path(i), c.upper.path(i));
        assert!(lo.iter().zip(hi).all(|(a, b)| a <= b), "pair {i}");
        if let Some(k) = c.meeting[i] {
            assert_eq!(&lo[k..], &hi[k..]);
        }
    }
    assert!(c.meeting.iter().filter(|m| m.is_some()).count() > n / 4);
    let direct = simulate_paths(&d, 0.5, 0.01, 1.0, n, 99).unwrap();
    let p = ks_p_value(c.upper.at_step(c.upper.steps), direct.at_step(direct.steps));
    assert!(p > 0.001, "{p}");

    let same = doeblin_couple(&d, 0.1, 0.1, 0.01, 0.5, 50, 3).unwrap();
    assert_eq!(same.lower.paths, same.upper.paths);
}

#[test]
fn constant_payoff_and_rate() {
    let p = ProblemSpec::new(
        Diffusion::brownian(1.0, 0.0, Interval::real_line()),
        ScalarFunction::constant(3.0),
        ScalarFunction::constant(2.0),
        0.5,
    )
    .unwrap();
    let s = McSettings {
        n_paths: 20_000,
        ..Default::default()
    };
    let g = estimate_g(&p, 0.0, &s).unwrap();
    let exact = 3.0 * 2.0 / 2.5;
    assert!((g.direct.mean - exact).abs() <= 3.0 * g.direct.std_error + 1e-12);
    assert!((g.time_changed.mean - exact).abs() < 1e-12);
}

#[test]
fn half_effective_payoff_both_estimators() {
    let p = example("psi_half");
    let s = McSettings {
        n_paths: 20_000,
        dt: 1e-2,
        ..Default::default()
    };
    for x in [0.5, 2.0] {
        let g = estimate_g(&p, x, &s).unwrap();
        assert!((g.direct.mean - 0.5).abs() <= 3.0 * g.direct.std_error + 5e-3, "{x}: {:?}", g.direct);
        assert!((g.time_changed.mean - 0.5).abs() < 1e-9, "{x}: {:?}", g.time_changed);
        assert!(g.agree(3.0) || (g.direct.mean - g.time_changed.mean).abs() < 5e-3);
    }
}

#[test]
fn call_payoff_matches_solver_operator() {
    let p = ProblemSpec::new(
        Diffusion::exponential_bm(0.3, 0.02),
        ScalarFunction::parse("max(x - 1, 0)").unwrap(),
        ScalarFunction::constant(0.8),
        0.1,
    )
    .unwrap();
    let grid = Grid::logarithmic(0.01, 100.0, 4001).unwrap();
    let u = g_operator(&p, &p.payoff, &grid, &BoundaryPolicy::default()).unwrap();
    let s = McSettings {
        n_paths: 40_000,
        dt: 0.02,
        ..Default::default()
    };
    for x in [0.6, 0.8, 1.0, 1.3, 1.8] {
        let g = estimate_g(&p, x, &s).unwrap();
        let target = u.eval(x);
        assert!((g.direct.mean - target).abs() <= 3.0 * g.direct.std_error, "{x}: {} vs {target}", g.direct.mean);
        assert!(g.agree(3.0), "{x}: {g:?}");
    }
}

#[test]
fn linear_payoff_estimators() {
    let (mu, beta, lambda) = (0.02, 0.1, 1.0);
    let p = ProblemSpec::new(
        Diffusion::exponential_bm(0.25, mu),
        ScalarFunction::parse("x").unwrap(),
        ScalarFunction::constant(lambda),
        beta,
    )
    .unwrap();
    let s = McSettings {
        n_paths: 20_000,
        dt: 0.05,
        ..Default::default()
    };
    let g = estimate_g(&p, 1.0, &s).unwrap();
    let exact = linear_payoff_value(1.0, mu, beta, lambda).unwrap();
    for e in [&g.direct, &g.time_changed] {
        assert!((e.mean - exact).abs() <= 3.0 * e.std_error, "{e:?} vs {exact}");
    }
}

#[test]
fn policy_at_left_edge_is_first_arrival() {
    let p = example("dw");
    let s = McSettings {
        n_paths: 5_000,
        dt: 0.05,
        horizon: Some(100.0),
        ..Default::default()
    };
    let a = evaluate_policy(&p, 0.0, 1.3, &s).unwrap();
    let g = estimate_g(&p, 1.3, &s).unwrap();
    assert_eq!(a.mean, g.direct.mean);
}

#[test]
fn dw_threshold_policy() {
    let p = example("dw");
    let sol = dw_solution(1.0, 0.2, 0.05, 0.1, 1.0).unwrap();
    let s = McSettings {
        n_paths: 20_000,
        dt: 0.05,
        horizon: Some(200.0),
        ..Default::default()
    };
    for x in [1.0, 2.0] {
        let e = evaluate_policy(&p, sol.threshold, x, &s).unwrap();
        let v = dw_value(&sol, x);
        assert!((e.mean - v).abs() <= e.error_budget(3.0), "{x}: {e:?} vs {v}");
        let worse = evaluate_policy(&p, 1.5 * sol.threshold, x, &s).unwrap();
        assert!(worse.mean <= v + 3.0 * worse.std_error);
    }
}

#[test]
fn estimates_are_deterministic() {
    let p = example("psi_half");
    let s = McSettings {
        n_paths: 2_000,
        ..Default::default()
    };
    let a = estimate_g(&p, 1.0, &s).unwrap();
    let b = estimate_g(&p, 1.0, &s).unwrap();
    assert_eq!(a.direct.mean.to_bits(), b.direct.mean.to_bits());
    assert_eq!(a.time_changed.mean.to_bits(), b.time_changed.mean.to_bits());
    let c = estimate_g(&p, 1.0, &McSettings { seed: 43, ..s }).unwrap();
    assert_ne!(a.direct.mean, c.direct.mean);
}

#[test]
fn singular_rate_is_refused() {
    let p = example("eg2_5");
    assert!(estimate_g(&p, 0.5, &McSettings::default()).is_err());
}

#[test]
fn coupled_values_are_ordered_for_increasing_data() {
    // g and theta increasing: with coupled paths and shared marks the
    // discounted first-arrival payoff from the higher start dominates.
    let d = Diffusion::brownian(1.0, 0.0, Interval::real_line());
    let (n, dt, horizon, beta) = (10_000, 0.01, 20.0, 0.5);
    let theta = ScalarFunction::parse("1 + 1/(1 + exp(-x))").unwrap();
    let g = |x: f64| 1.0 + x.max(0.0);
    let c = doeblin_couple(&d, 0.0, 0.4, dt, horizon, n, 8).unwrap();
    let value = |path: &[f64], marks: &SpaceTimeMarks| {
        let ev = thin_events(path, dt, &theta, marks).unwrap();
        ev.first().map_or(0.0, |&t| (-beta * t).exp() * g(path[(t / dt) as usize]))
    };
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for i in 0..n {
        let marks = SpaceTimeMarks::generate(horizon, 2.5, 8, i).unwrap();
        lo.push(value(c.lower.path(i), &marks));
        hi.push(value(c.upper.path(i), &marks));
    }
    let (ml, vl) = mean_var(&lo);
    let (mh, vh) = mean_var(&hi);
    let se = ((vl + vh) / n as f64).sqrt();
    assert!(mh >= ml - 3.0 * se, "{mh} < {ml}");
}
