//! Adaptive Gauss–Kronrod quadrature and a nested-refinement divergence test.

use serde::Serialize;

// 15-point Kronrod nodes on [-1, 1] (non-negative half) with the embedded
// 7-point Gauss weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Nodes of the 15-point Kronrod rule on `[a, b]` with their weights.
pub fn kronrod_nodes(a: f64, b: f64) -> [(f64, f64); 15] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); 15];
    for j in 0..7 {
        out[2 * j] = (c - h * XGK[j], h * WGK[j]);
        out[2 * j + 1] = (c + h * XGK[j], h * WGK[j]);
    }
    out[14] = (c, h * WGK[7]);
    out
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_depth: u32,
    pub max_evaluations: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        QuadSettings {
            abs_tol: 1e-13,
            rel_tol: 1e-10,
            max_depth: 48,
            max_evaluations: 200_000,
        }
    }
}

/// Adaptive bisection with a local G7/K15 error estimate.
///
/// Non-finite integrand values propagate into a non-finite result.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, settings: &QuadSettings) -> QuadResult {
    if a == b {
        return QuadResult {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
            converged: true,
        };
    }
    let (whole, whole_err) = gk15(&mut f, a, b);
    let mut evaluations = 15;
    if !whole.is_finite() {
        return QuadResult {
            value: whole,
            error: f64::INFINITY,
            evaluations,
            converged: false,
        };
    }
    let mut converged = true;
    let mut value = 0.0;
    let mut error = 0.0;
    // (a, b, estimate, err, depth)
    let mut stack = vec![(a, b, whole, whole_err, 0u32)];
    let target = |est: f64| settings.abs_tol.max(settings.rel_tol * est.abs());
    let global = whole.abs();
    while let Some((lo, hi, est, err, depth)) = stack.pop() {
        let width_share = ((hi - lo) / (b - a)).abs();
        if err <= target(global) * width_share {
            value += est;
            error += err;
            continue;
        }
        if depth >= settings.max_depth || evaluations >= settings.max_evaluations {
            converged = false;
            value += est;
            error += err;
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let (l, le) = gk15(&mut f, lo, mid);
        let (r, re) = gk15(&mut f, mid, hi);
        evaluations += 30;
        if !(l.is_finite() && r.is_finite()) {
            return QuadResult {
                value: f64::INFINITY,
                error: f64::INFINITY,
                evaluations,
                converged: false,
            };
        }
        stack.push((lo, mid, l, le, depth + 1));
        stack.push((mid, hi, r, re, depth + 1));
    }
    QuadResult {
        value,
        error,
        evaluations,
        converged,
    }
}

/// Outcome of an improper-integral test toward an endpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TailOutcome {
    Converges { value: f64 },
    Diverges { witness: (f64, f64), partial: f64 },
    Inconclusive { witness: (f64, f64), partial: f64 },
}

impl TailOutcome {
    pub fn is_finite(&self) -> bool {
        matches!(self, TailOutcome::Converges { .. })
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            TailOutcome::Converges { value } => Some(*value),
            _ => None,
        }
    }
}

/// Refinement schedule for [`tail_integral`].
///
/// Each level moves the integration limit one decade closer to a finite
/// endpoint (or one decade further toward an infinite one). Divergence is
/// declared when the per-level increments stop shrinking (ratio at least
/// `grow_ratio`) over `window` consecutive levels, which catches power-law
/// growth (ratio 10) as well as logarithmic growth (ratio 1).
#[derive(Debug, Clone, Copy)]
pub struct DivergenceCriterion {
    pub levels: usize,
    pub window: usize,
    pub grow_ratio: f64,
    pub shrink_ratio: f64,
    /// Relative size of the extrapolated remainder accepted as converged.
    pub tail_rel_tol: f64,
}

impl Default for DivergenceCriterion {
    fn default() -> Self {
        DivergenceCriterion {
            levels: 10,
            window: 4,
            grow_ratio: 0.9,
            shrink_ratio: 0.75,
            tail_rel_tol: 1e-3,
        }
    }
}

/// Level points from `inner` toward `endpoint`.
pub fn refinement_points(inner: f64, endpoint: f64, levels: usize) -> Vec<f64> {
    let mut pts = Vec::with_capacity(levels + 1);
    pts.push(inner);
    if endpoint.is_finite() {
        let d = endpoint - inner;
        for k in 1..=levels {
            pts.push(endpoint - d * 10f64.powi(-(k as i32)));
        }
    } else {
        let sign = endpoint.signum();
        let span = 1.0f64.max(inner.abs());
        for k in 1..=levels {
            pts.push(inner + sign * span * 10f64.powi(k as i32));
        }
    }
    pts
}

/// Tests whether `int_{inner}^{endpoint} |f|` is finite.
pub fn tail_integral<F: FnMut(f64) -> f64>(
    mut f: F,
    inner: f64,
    endpoint: f64,
    criterion: &DivergenceCriterion,
    settings: &QuadSettings,
) -> TailOutcome {
    let pts = refinement_points(inner, endpoint, criterion.levels);
    let mut increments = Vec::with_capacity(criterion.levels);
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = if w[0] < w[1] { (w[0], w[1]) } else { (w[1], w[0]) };
        let r = integrate(|x| f(x).abs(), a, b, settings);
        if !r.value.is_finite() {
            return TailOutcome::Diverges {
                witness: (a, b),
                partial: f64::INFINITY,
            };
        }
        increments.push(r.value);
        total += r.value;
    }
    let last_pair = {
        let n = pts.len();
        let (a, b) = (pts[n - 2], pts[n - 1]);
        if a < b {
            (a, b)
        } else {
            (b, a)
        }
    };
    let witness = if endpoint.is_finite() {
        if pts[0] < endpoint {
            (last_pair.0, endpoint)
        } else {
            (endpoint, last_pair.1)
        }
    } else {
        last_pair
    };
    let n = increments.len();
    let last = increments[n - 1];
    if total == 0.0 || last <= 1e-14 * total {
        return TailOutcome::Converges { value: total };
    }
    let w = criterion.window.min(n - 1);
    let ratios: Vec<f64> = (n - w..n)
        .map(|i| {
            if increments[i - 1] > 0.0 {
                increments[i] / increments[i - 1]
            } else {
                f64::INFINITY
            }
        })
        .collect();
    if ratios.iter().all(|&r| r >= criterion.grow_ratio) {
        return TailOutcome::Diverges {
            witness,
            partial: total,
        };
    }
    if ratios.iter().all(|&r| r <= criterion.shrink_ratio) {
        let r = ratios.iter().cloned().fold(0.0, f64::max);
        let remainder = last * r / (1.0 - r);
        if remainder <= criterion.tail_rel_tol * total {
            return TailOutcome::Converges {
                value: total + remainder,
            };
        }
    }
    TailOutcome::Inconclusive {
        witness,
        partial: total,
    }
}
