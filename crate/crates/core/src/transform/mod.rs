//! Scale functions, natural-scale reduction, boundary classification and the
//! time change that turns first-arrival values into exponential-time averages.

mod scale;

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

pub use scale::{ScaleEnd, ScaleMap};

use crate::model::{
    cap_infinite, Builtin, Derived, Diffusion, EndpointKind, EvalError, ExtReal, Interval, ProblemSpec, ScalarFunction, Side,
};
use crate::quad::{tail_integral, DivergenceCriterion, QuadSettings, TailOutcome};

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("anchor {anchor} is not a finite point of the interval")]
    Anchor { anchor: f64 },
    #[error("drift ratio b/a^2 is not integrable on [{lo}, {hi}]")]
    NotIntegrable { lo: f64, hi: f64 },
    #[error("diffusion is not in natural scale")]
    NotNaturalScale,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Kind of an endpoint together with the diagnostic integrals behind it.
#[derive(Debug, Clone, Serialize)]
pub struct EndpointClassification {
    pub side: Side,
    /// Endpoint in the original coordinates.
    pub endpoint: f64,
    /// Endpoint in natural scale, `s(e)`.
    pub scaled_endpoint: f64,
    pub kind: EndpointKind,
    /// `int_e |m - e| / eta(m)^2 dm`, for finite `s(e)`.
    pub accessibility: Option<TailOutcome>,
    /// `int_e 1 / eta(m)^2 dm`, for infinite `s(e)`.
    pub speed_tail: Option<TailOutcome>,
    /// `int_e |m| / eta(m)^2 dm`, for infinite `s(e)`; finite exactly for entrance points.
    pub entrance: Option<TailOutcome>,
}

fn criterion_for(e: f64) -> DivergenceCriterion {
    DivergenceCriterion {
        levels: if e.is_finite() { 10 } else { 12 },
        ..DivergenceCriterion::default()
    }
}

/// Point between the anchor and the endpoint where endpoint tests start.
fn tail_start(map: &ScaleMap, side: Side) -> f64 {
    let c = map.anchor();
    let e = map.interval().endpoint(side);
    if e == c {
        // anchored on the endpoint itself: start a unit inside
        let iv = map.interval();
        let other = iv.endpoint(if side == Side::Left { Side::Right } else { Side::Left });
        if other.is_finite() {
            0.5 * (e + other)
        } else {
            e + if side == Side::Left { 1.0 } else { -1.0 }
        }
    } else {
        c
    }
}

/// Classifies one endpoint of a diffusion through its scale function.
///
/// The integrals are computed in the original coordinates after the
/// substitution `m = s(x)`, which leaves their finiteness unchanged.
pub fn classify_with_scale(diffusion: &Diffusion, map: &ScaleMap, side: Side) -> EndpointClassification {
    let settings = QuadSettings::default();
    let e = diffusion.interval.endpoint(side);
    let end = map.end(side);
    let start = tail_start(map, side);
    let crit = criterion_for(e);
    let a2 = |x: f64| diffusion.vol_at(x).map(|a| a * a).unwrap_or(f64::NAN);
    let finite_scale = end.test.is_finite() && end.limit.is_finite();
    if finite_scale {
        let acc = tail_integral(
            |x| match map.distance_to_end(x, side) {
                Some(d) => d / (map.s_prime(x) * a2(x)),
                None => f64::NAN,
            },
            start,
            e,
            &crit,
            &settings,
        );
        let kind = match acc {
            TailOutcome::Converges { .. } => EndpointKind::Absorbing,
            TailOutcome::Diverges { .. } => EndpointKind::Natural,
            TailOutcome::Inconclusive { .. } => EndpointKind::Unclassified,
        };
        return EndpointClassification {
            side,
            endpoint: e,
            scaled_endpoint: end.limit,
            kind,
            accessibility: Some(acc),
            speed_tail: None,
            entrance: None,
        };
    }
    let speed = tail_integral(|x| 1.0 / (map.s_prime(x) * a2(x)), start, e, &crit, &settings);
    let entrance = tail_integral(|x| map.s(x).abs() / (map.s_prime(x) * a2(x)), start, e, &crit, &settings);
    let kind = if matches!(end.test, TailOutcome::Inconclusive { .. }) {
        EndpointKind::Unclassified
    } else {
        match (&speed, &entrance) {
            (_, TailOutcome::Converges { .. }) => EndpointKind::Entrance,
            (TailOutcome::Diverges { .. }, _) | (_, TailOutcome::Diverges { .. }) => EndpointKind::Natural,
            _ => EndpointKind::Unclassified,
        }
    };
    EndpointClassification {
        side,
        endpoint: e,
        scaled_endpoint: end.limit,
        kind,
        accessibility: None,
        speed_tail: Some(speed),
        entrance: Some(entrance),
    }
}

/// Classifies an endpoint of a diffusion in natural scale.
pub fn classify_endpoint(diffusion: &Diffusion, side: Side) -> Result<EndpointClassification, TransformError> {
    if !diffusion.is_natural_scale() {
        return Err(TransformError::NotNaturalScale);
    }
    let map = ScaleMap::for_diffusion(diffusion)?;
    Ok(classify_with_scale(diffusion, &map, side))
}

/// Classifies both endpoints of any diffusion via its scale function.
pub fn classify_diffusion(diffusion: &Diffusion) -> Result<[EndpointClassification; 2], TransformError> {
    let map = ScaleMap::for_diffusion(diffusion)?;
    Ok([
        classify_with_scale(diffusion, &map, Side::Left),
        classify_with_scale(diffusion, &map, Side::Right),
    ])
}

/// Scale function of a diffusion with the given anchor.
pub fn scale_function(diffusion: &Diffusion, anchor: f64) -> Result<ScaleMap, TransformError> {
    ScaleMap::new(diffusion, anchor)
}

/// The problem for `M = s(X)`: zero drift, volatility `(a s') o s^{-1}`,
/// payoff `g o s^{-1}` and rate `theta o s^{-1}`, with the same discount.
pub fn to_natural_scale(
    p: &ProblemSpec,
    anchor: Option<f64>,
) -> Result<(ProblemSpec, Arc<ScaleMap>), TransformError> {
    let d = &p.diffusion;
    let map = Arc::new(ScaleMap::new(d, anchor.unwrap_or_else(|| d.interval.anchor()))?);
    let (lo, hi) = map.image();
    let iv = &d.interval;
    let interval = Interval {
        left: ExtReal(lo),
        right: ExtReal(hi),
        left_kind: iv.left_kind,
        right_kind: iv.right_kind,
    };
    let inv = {
        let m = Arc::clone(&map);
        ScalarFunction::custom("scale inverse", move |y| m.inverse(y))
    };
    let eta = {
        let m = Arc::clone(&map);
        let vol = d.vol.clone();
        ScalarFunction::custom("natural-scale volatility", move |y| {
            let x = m.inverse(y);
            vol.eval(x).unwrap_or(f64::NAN) * m.s_prime(x)
        })
    };
    let q = ProblemSpec {
        name: p.name.as_ref().map(|n| format!("{n} (natural scale)")),
        diffusion: Diffusion::new(eta, ScalarFunction::constant(0.0), interval),
        payoff: ScalarFunction::compose(p.payoff.clone(), inv.clone()),
        rate: ScalarFunction::compose(p.rate.clone(), inv),
        beta: p.beta,
    };
    Ok((q, map))
}

/// Martingale test for the time-changed process at one endpoint.
#[derive(Debug, Clone, Serialize)]
pub struct KotaniResult {
    pub side: Side,
    pub endpoint: f64,
    /// `None` for finite endpoints, where no condition applies.
    pub integral: Option<TailOutcome>,
}

impl KotaniResult {
    /// `Some(true)` when the condition holds, `None` when inconclusive.
    pub fn holds(&self) -> Option<bool> {
        match &self.integral {
            None => Some(true),
            Some(TailOutcome::Diverges { .. }) => Some(true),
            Some(TailOutcome::Converges { .. }) => Some(false),
            Some(TailOutcome::Inconclusive { .. }) => None,
        }
    }
}

/// Checks `int^{+-inf} |y| (beta + theta(y)) / a(y)^2 dy = inf` at infinite endpoints.
pub fn kotani_check(p: &ProblemSpec) -> Result<[KotaniResult; 2], TransformError> {
    if !p.diffusion.is_natural_scale() {
        return Err(TransformError::NotNaturalScale);
    }
    let cap = p.default_rate_cap();
    let iv = p.interval();
    let settings = QuadSettings::default();
    let one = |side: Side| {
        let e = iv.endpoint(side);
        if e.is_finite() {
            return KotaniResult { side, endpoint: e, integral: None };
        }
        let start = match side {
            Side::Left if iv.hi().is_finite() => iv.hi().min(0.0) - 1.0,
            Side::Right if iv.lo().is_finite() => iv.lo().max(0.0) + 1.0,
            _ => iv.anchor(),
        };
        let out = tail_integral(
            |y| {
                let a = p.diffusion.vol_at(y).unwrap_or(f64::NAN);
                let th = p.rate.eval(y).map(|t| cap_infinite(t, cap)).unwrap_or(f64::NAN);
                y.abs() * (p.beta + th) / (a * a)
            },
            start,
            e,
            &criterion_for(e),
            &settings,
        );
        KotaniResult { side, endpoint: e, integral: Some(out) }
    };
    Ok([one(Side::Left), one(Side::Right)])
}

/// Diffusion `Y` with volatility `a / sqrt(beta + theta)` and drift `b / (beta + theta)`.
///
/// Infinite rates are replaced by the problem's default cap.
pub fn time_change_coefficients(p: &ProblemSpec) -> Diffusion {
    time_change_coefficients_with_cap(p, p.default_rate_cap())
}

/// `f / c` kept in closed form for constants and linear builtins.
fn scaled_builtin(f: &ScalarFunction, c: f64) -> Option<ScalarFunction> {
    match f {
        ScalarFunction::Builtin(Builtin::Linear { slope, intercept }) => Some(ScalarFunction::linear(slope / c, intercept / c)),
        _ => f.as_constant().map(|v| ScalarFunction::constant(v / c)),
    }
}

pub fn time_change_coefficients_with_cap(p: &ProblemSpec, cap: f64) -> Diffusion {
    let d = &p.diffusion;
    if let Some(theta) = p.rate.as_constant() {
        let clock = p.beta + cap_infinite(theta, cap);
        if let (Some(vol), Some(drift)) = (scaled_builtin(&d.vol, clock.sqrt()), scaled_builtin(&d.drift, clock)) {
            return Diffusion::new(vol, drift, d.interval.clone());
        }
    }
    let vol = ScalarFunction::Derived(Arc::new(Derived::TimeChangedVol {
        vol: d.vol.clone(),
        rate: p.rate.clone(),
        beta: p.beta,
        cap,
    }));
    let drift = if d.drift.is_zero() {
        ScalarFunction::constant(0.0)
    } else {
        ScalarFunction::Derived(Arc::new(Derived::TimeChangedDrift {
            drift: d.drift.clone(),
            rate: p.rate.clone(),
            beta: p.beta,
            cap,
        }))
    };
    Diffusion::new(vol, drift, d.interval.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_line(left: EndpointKind) -> Interval {
        Interval::with_kinds(0.0, f64::INFINITY, left, EndpointKind::Natural).unwrap()
    }

    #[test]
    fn brownian_endpoints_are_natural() {
        let d = Diffusion::brownian(1.0, 0.0, Interval::real_line());
        for side in [Side::Left, Side::Right] {
            assert_eq!(classify_endpoint(&d, side).unwrap().kind, EndpointKind::Natural);
        }
    }

    #[test]
    fn driftless_exponential_bm_zero_is_natural() {
        let d = Diffusion::exponential_bm(0.3, 0.0);
        let c = classify_endpoint(&d, Side::Left).unwrap();
        assert_eq!(c.kind, EndpointKind::Natural);
        assert!(matches!(c.accessibility, Some(TailOutcome::Diverges { .. })));
    }

    #[test]
    fn absorbed_bm_zero_is_accessible() {
        let d = Diffusion::brownian(1.0, 0.0, half_line(EndpointKind::Absorbing));
        assert_eq!(classify_endpoint(&d, Side::Left).unwrap().kind, EndpointKind::Absorbing);
        assert_eq!(classify_endpoint(&d, Side::Right).unwrap().kind, EndpointKind::Natural);
    }

    #[test]
    fn drifting_exponential_bm_endpoints_are_natural() {
        let d = Diffusion::exponential_bm(0.2, 0.05);
        let [l, r] = classify_diffusion(&d).unwrap();
        assert_eq!(l.kind, EndpointKind::Natural, "{l:?}");
        assert_eq!(r.kind, EndpointKind::Natural, "{r:?}");
        assert!(classify_endpoint(&d, Side::Left).is_err());
    }

    #[test]
    fn unit_drift_bm_in_natural_scale() {
        let iv = half_line(EndpointKind::Absorbing);
        let p = ProblemSpec::new(
            Diffusion::brownian(1.0, 1.0, iv),
            ScalarFunction::parse("x").unwrap(),
            ScalarFunction::constant(1.0),
            0.5,
        )
        .unwrap();
        let (q, map) = to_natural_scale(&p, Some(0.0)).unwrap();
        let iv = q.interval();
        assert!(iv.lo().abs() < 1e-15 && (iv.hi() - 0.5).abs() < 1e-10);
        for m in [0.05, 0.2, 0.4, 0.49] {
            let eta = q.diffusion.vol_at(m).unwrap();
            assert!((eta - (1.0 - 2.0 * m)).abs() < 1e-8, "{m}: {eta}");
        }
        let x = 0.8;
        assert!((q.payoff_at(map.s(x)).unwrap() - x).abs() < 1e-9);
        let [l, r] = classify_diffusion(&q.diffusion).unwrap();
        assert_eq!(l.kind, EndpointKind::Absorbing);
        assert_eq!(r.kind, EndpointKind::Natural);
    }

    #[test]
    fn kotani_cases() {
        let beta = 0.1;
        let bounded = ProblemSpec::new(
            Diffusion::exponential_bm(0.3, 0.0),
            ScalarFunction::parse("x").unwrap(),
            ScalarFunction::constant(1.0),
            beta,
        )
        .unwrap();
        let k = kotani_check(&bounded).unwrap();
        assert_eq!(k[0].holds(), Some(true));
        assert_eq!(k[1].holds(), Some(true));

        let strict = ProblemSpec::new(
            Diffusion::new(
                ScalarFunction::parse("x^2").unwrap(),
                ScalarFunction::constant(0.0),
                half_line(EndpointKind::Natural),
            ),
            ScalarFunction::parse("x").unwrap(),
            ScalarFunction::constant(0.0),
            beta,
        )
        .unwrap();
        assert_eq!(kotani_check(&strict).unwrap()[1].holds(), Some(false));

        let finite = ProblemSpec::new(
            Diffusion::brownian(1.0, 0.0, Interval::new(0.0, 1.0).unwrap()),
            ScalarFunction::parse("x").unwrap(),
            ScalarFunction::constant(1.0),
            beta,
        )
        .unwrap();
        assert!(kotani_check(&finite).unwrap().iter().all(|k| k.holds() == Some(true)));
    }

    #[test]
    fn time_change_examples() {
        let beta = 0.5;
        let p = ProblemSpec::new(
            Diffusion::brownian(1.0, 0.0, half_line(EndpointKind::Absorbing)),
            ScalarFunction::parse("1+x").unwrap(),
            ScalarFunction::parse("0.5/(1+2*x)").unwrap(),
            beta,
        )
        .unwrap();
        let y = time_change_coefficients(&p);
        for x in [0.0, 0.5, 3.0] {
            let expect = ((1.0 + 2.0 * x) / (beta * (2.0 + 2.0 * x))).sqrt();
            assert!((y.vol_at(x).unwrap() - expect).abs() < 1e-14);
            assert_eq!(y.drift_at(x).unwrap(), 0.0);
        }
        let q = ProblemSpec::new(
            Diffusion::brownian(2.0, 1.0, Interval::real_line()),
            ScalarFunction::parse("1").unwrap(),
            ScalarFunction::constant(0.0),
            beta,
        )
        .unwrap();
        let y = time_change_coefficients(&q);
        assert!((y.vol_at(0.3).unwrap() - 2.0 / beta.sqrt()).abs() < 1e-14);
        assert!((y.drift_at(0.3).unwrap() - 1.0 / beta).abs() < 1e-14);

        let r = ProblemSpec::new(
            Diffusion::exponential_bm(0.3, 0.05),
            ScalarFunction::parse("x").unwrap(),
            ScalarFunction::constant(1.5),
            beta,
        )
        .unwrap();
        let y = time_change_coefficients(&r);
        assert_eq!(y.vol, ScalarFunction::linear(0.3 / 2f64.sqrt(), 0.0));
        assert_eq!(y.drift, ScalarFunction::linear(0.05 / 2.0, 0.0));
    }
}
