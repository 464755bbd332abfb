use serde::Serialize;

use crate::quad::{integrate, tail_integral, DivergenceCriterion, QuadSettings, TailOutcome};
use crate::transform::{classify_with_scale, EndpointClassification, ScaleMap};

use super::problem::{EndpointKind, ProblemSpec, Side};

const PIECES: usize = 64;
const PROBES: usize = 257;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Inconclusive,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Assumption {
    /// `a > 0`, and `1/a^2`, `b/a^2` locally integrable.
    Coefficients,
    /// Endpoints natural, or absorbing when reachable.
    Boundaries,
    /// `theta/a^2` locally integrable, plus the endpoint condition at reachable endpoints.
    Rate,
    /// Payoff non-negative and rate positive somewhere.
    Admissible,
}

#[derive(Debug, Clone, Serialize)]
pub struct Finding {
    pub assumption: Assumption,
    pub status: Status,
    /// Name of the integral or quantity checked.
    pub check: String,
    pub detail: String,
    /// Sub-interval on which the check failed or could not be settled.
    pub witness: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub findings: Vec<Finding>,
    /// Endpoint kinds after classification (declared kinds where classification failed).
    pub kinds: [EndpointKind; 2],
    pub classification: Option<[EndpointClassification; 2]>,
    /// Infinite rates were replaced by the cap in the rate checks.
    pub rate_capped: bool,
}

impl AssumptionReport {
    pub fn status(&self, which: Assumption) -> Status {
        self.findings
            .iter()
            .filter(|f| f.assumption == which)
            .map(|f| f.status)
            .max()
            .unwrap_or(Status::Pass)
    }

    pub fn overall(&self) -> Status {
        self.findings.iter().map(|f| f.status).max().unwrap_or(Status::Pass)
    }

    pub fn passed(&self) -> bool {
        self.overall() == Status::Pass
    }

    pub fn failures(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.status == Status::Fail)
    }
}

struct Checker<'a> {
    p: &'a ProblemSpec,
    findings: Vec<Finding>,
    settings: QuadSettings,
}

impl Checker<'_> {
    fn push(&mut self, assumption: Assumption, status: Status, check: &str, detail: String, witness: Option<(f64, f64)>) {
        self.findings.push(Finding {
            assumption,
            status,
            check: check.to_string(),
            detail,
            witness,
        });
    }

    /// Local integrability of `f` on the interior probe window, piece by piece.
    /// A piece whose quadrature does not settle is examined by nested
    /// refinement toward its largest sampled value.
    fn local_integrability<F: Fn(f64) -> f64>(&mut self, assumption: Assumption, name: &str, f: F) {
        let (lo, hi) = self.p.interval().probe_bounds();
        let geometric = lo > 0.0 && hi / lo > 1e3;
        let node = |k: usize| {
            let t = k as f64 / PIECES as f64;
            if geometric {
                (lo.ln() + t * (hi.ln() - lo.ln())).exp()
            } else {
                lo + t * (hi - lo)
            }
        };
        let mut worst = Status::Pass;
        let mut detail = format!("integrable on [{lo}, {hi}]");
        let mut witness = None;
        for k in 0..PIECES {
            let (a, b) = (node(k), node(k + 1));
            let r = integrate(|x| f(x).abs(), a, b, &self.settings);
            if r.value.is_finite() && r.converged {
                continue;
            }
            let (status, w, msg) = self.examine_piece(&f, a, b);
            if status > worst {
                worst = status;
                detail = msg;
                witness = Some(w);
            }
            if worst == Status::Fail {
                break;
            }
        }
        self.push(assumption, worst, name, detail, witness);
    }

    fn examine_piece<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> (Status, (f64, f64), String) {
        let mut peak = 0.5 * (a + b);
        let mut peak_val = -1.0;
        for i in 0..=1000 {
            let x = a + (b - a) * i as f64 / 1000.0;
            let v = f(x).abs();
            if !v.is_finite() {
                peak = x;
                break;
            }
            if v > peak_val {
                peak_val = v;
                peak = x;
            }
        }
        let crit = DivergenceCriterion::default();
        let mut status = Status::Pass;
        let mut witness = (a, b);
        for from in [a, b] {
            if from == peak {
                continue;
            }
            match tail_integral(f, from, peak, &crit, &self.settings) {
                TailOutcome::Converges { .. } => {}
                TailOutcome::Diverges { witness: w, .. } => return (Status::Fail, w, format!("diverges under refinement toward {peak}")),
                TailOutcome::Inconclusive { witness: w, .. } => {
                    status = Status::Inconclusive;
                    witness = w;
                }
            }
        }
        (status, witness, format!("quadrature unsettled near {peak}"))
    }
}

/// Numerical check of the standing assumptions for a problem.
pub fn validate_problem(p: &ProblemSpec) -> AssumptionReport {
    let mut c = Checker {
        p,
        findings: Vec::new(),
        settings: QuadSettings::default(),
    };
    let d = &p.diffusion;
    let iv = p.interval();
    let cap = p.default_rate_cap();
    let mut rate_capped = false;

    // pointwise checks on a probe grid
    let probes = iv.probe_points(PROBES);
    let mut bad_vol = None;
    let mut bad_payoff = None;
    let mut bad_rate = None;
    let mut positive_rate = false;
    for &x in &probes {
        let interior = iv.contains(x);
        if interior && bad_vol.is_none() {
            match (d.vol_at(x), d.drift_at(x)) {
                (Ok(a), Ok(_)) if a > 0.0 => {}
                (Ok(a), Ok(_)) => bad_vol = Some((x, format!("a({x}) = {a} is not positive"))),
                (Err(e), _) | (_, Err(e)) => bad_vol = Some((x, e.to_string())),
            }
        }
        if bad_payoff.is_none() {
            match p.payoff_at(x) {
                Ok(g) if g >= 0.0 => {}
                Ok(g) => bad_payoff = Some((x, format!("g({x}) = {g} is negative"))),
                Err(e) => bad_payoff = Some((x, e.to_string())),
            }
        }
        match p.rate_at(x) {
            Ok(t) if t >= 0.0 => {
                positive_rate |= t > 0.0;
                rate_capped |= t.is_infinite();
            }
            Ok(t) => {
                bad_rate.get_or_insert((x, format!("theta({x}) = {t} is negative")));
            }
            Err(e) => {
                bad_rate.get_or_insert((x, e.to_string()));
            }
        }
    }
    match bad_vol {
        Some((x, msg)) => c.push(Assumption::Coefficients, Status::Fail, "a > 0", msg, Some((x, x))),
        None => c.push(Assumption::Coefficients, Status::Pass, "a > 0", "positive on probe grid".into(), None),
    }
    match bad_payoff {
        Some((x, msg)) => c.push(Assumption::Admissible, Status::Fail, "g >= 0", msg, Some((x, x))),
        None => c.push(Assumption::Admissible, Status::Pass, "g >= 0", "non-negative on probe grid".into(), None),
    }
    match bad_rate {
        Some((x, msg)) => c.push(Assumption::Admissible, Status::Fail, "theta >= 0", msg, Some((x, x))),
        None if positive_rate => c.push(Assumption::Admissible, Status::Pass, "int theta > 0", "rate positive on probe grid".into(), None),
        None => {
            let (lo, hi) = iv.probe_bounds();
            c.push(Assumption::Admissible, Status::Fail, "int theta > 0", "rate vanishes on the probe grid".into(), Some((lo, hi)));
        }
    }

    let a2 = |x: f64| d.vol_at(x).map(|a| a * a).unwrap_or(f64::NAN);
    c.local_integrability(Assumption::Coefficients, "1/a^2", |x| 1.0 / a2(x));
    c.local_integrability(Assumption::Coefficients, "b/a^2", |x| d.drift_at(x).unwrap_or(f64::NAN) / a2(x));
    let rate_q = |x: f64| {
        let t = p.rate.eval(x).unwrap_or(f64::NAN);
        if t.is_infinite() {
            cap
        } else {
            t
        }
    };
    c.local_integrability(Assumption::Rate, "theta/a^2", |x| rate_q(x) / a2(x));

    // boundary classification through the scale function
    let mut kinds = [iv.left_kind, iv.right_kind];
    let mut classification = None;
    if c.findings.iter().any(|f| f.assumption == Assumption::Coefficients && f.status == Status::Fail) {
        c.push(
            Assumption::Boundaries,
            Status::Inconclusive,
            "endpoint kinds",
            "skipped: coefficient checks failed".into(),
            None,
        );
    } else {
        match ScaleMap::for_diffusion(d) {
            Err(e) => c.push(Assumption::Boundaries, Status::Inconclusive, "scale function", e.to_string(), None),
            Ok(map) => {
                let cls = [
                    classify_with_scale(d, &map, Side::Left),
                    classify_with_scale(d, &map, Side::Right),
                ];
                for (i, cl) in cls.iter().enumerate() {
                    let declared = kinds[i];
                    let name = format!("{:?} endpoint {}", cl.side, cl.endpoint).to_lowercase();
                    let e = cl.endpoint;
                    let near = edge_witness(iv.anchor(), e);
                    match cl.kind {
                        EndpointKind::Unclassified => c.push(
                            Assumption::Boundaries,
                            Status::Inconclusive,
                            &name,
                            "endpoint integrals neither settle nor diverge".into(),
                            Some(near),
                        ),
                        EndpointKind::Entrance => c.push(
                            Assumption::Boundaries,
                            Status::Fail,
                            &name,
                            "entrance boundary: neither natural nor absorbing".into(),
                            Some(near),
                        ),
                        found if declared != EndpointKind::Unclassified && declared != found => c.push(
                            Assumption::Boundaries,
                            Status::Fail,
                            &name,
                            format!("declared {declared:?} but classified {found:?}").to_lowercase(),
                            Some(near),
                        ),
                        found => {
                            kinds[i] = found;
                            c.push(Assumption::Boundaries, Status::Pass, &name, format!("{found:?}").to_lowercase(), None);
                        }
                    }
                }
                for (i, cl) in cls.iter().enumerate() {
                    if cl.kind != EndpointKind::Absorbing {
                        continue;
                    }
                    let side = cl.side;
                    let e = cl.endpoint;
                    let name = format!("theta at {:?} endpoint", side).to_lowercase();
                    match p.rate_at(e) {
                        Ok(t) if t.is_finite() && t >= 0.0 => {
                            c.push(Assumption::Rate, Status::Pass, &name, format!("theta({e}) = {t}"), None)
                        }
                        Ok(t) => c.push(Assumption::Rate, Status::Fail, &name, format!("theta({e}) = {t} is not finite"), Some((e, e))),
                        Err(err) => c.push(Assumption::Rate, Status::Fail, &name, err.to_string(), Some((e, e))),
                    }
                    let outcome = tail_integral(
                        |x| match map.distance_to_end(x, side) {
                            Some(dist) => rate_q(x) * dist / (map.s_prime(x) * a2(x)),
                            None => f64::NAN,
                        },
                        iv.anchor(),
                        e,
                        &DivergenceCriterion::default(),
                        &c.settings,
                    );
                    let check = "theta |s - s(e)| / (s' a^2)";
                    match outcome {
                        TailOutcome::Converges { value } => {
                            c.push(Assumption::Rate, Status::Pass, check, format!("finite ({value:.6e}) at {e}"), None)
                        }
                        TailOutcome::Diverges { witness, .. } => c.push(
                            Assumption::Rate,
                            Status::Fail,
                            check,
                            format!("diverges under refinement at {e}"),
                            Some(witness),
                        ),
                        TailOutcome::Inconclusive { witness, .. } => c.push(
                            Assumption::Rate,
                            Status::Inconclusive,
                            check,
                            format!("unsettled at {e}"),
                            Some(witness),
                        ),
                    }
                    let _ = i;
                }
                classification = Some(cls);
            }
        }
    }

    AssumptionReport {
        findings: c.findings,
        kinds,
        classification,
        rate_capped,
    }
}

fn edge_witness(anchor: f64, e: f64) -> (f64, f64) {
    if e.is_finite() {
        let inner = e + (anchor - e) * 1e-10;
        (inner.min(e), inner.max(e))
    } else if e > 0.0 {
        (anchor + 1e12, e)
    } else {
        (e, anchor - 1e12)
    }
}
