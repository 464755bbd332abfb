use serde::Serialize;

use crate::model::{Diffusion, EvalError, Interval, Side};
use crate::quad::{integrate, kronrod_nodes, tail_integral, DivergenceCriterion, QuadSettings, TailOutcome};

use super::TransformError;

const CORE_CELLS: usize = 1024;
const LADDER_STEPS_PER_DECADE: i32 = 64;
const MAX_SUBCELLS: usize = 64;

/// Behaviour of the scale function beyond the last tabulated node on one side.
#[derive(Debug, Clone, Serialize)]
pub struct ScaleEnd {
    pub side: Side,
    /// Interval endpoint (possibly infinite).
    pub endpoint: f64,
    /// Outcome of the finiteness test for `int s'` toward the endpoint.
    pub test: TailOutcome,
    /// `s(e)`, or `-inf` / `+inf` when the scale integral diverges
    /// (also used when the test is inconclusive).
    pub limit: f64,
    #[serde(skip)]
    slope_out: f64,
    #[serde(skip)]
    log_dist: Option<Vec<f64>>,
}

/// Scale function `s` with `s(c) = 0`, `s'(c) = 1`, tabulated on an adaptive grid.
///
/// `log s'` is stored exactly at the nodes and interpolated with cubic Hermite
/// polynomials using `-2b/a^2` as derivative; `s` uses Hermite
/// interpolation with the exact `s'` at the nodes.
#[derive(Debug, Clone)]
pub struct ScaleMap {
    anchor: f64,
    interval: Interval,
    xs: Vec<f64>,
    log_sp: Vec<f64>,
    dlog_sp: Vec<f64>,
    s: Vec<f64>,
    left: ScaleEnd,
    right: ScaleEnd,
}

struct SideTable {
    xs: Vec<f64>,
    log_sp: Vec<f64>,
    dlog_sp: Vec<f64>,
    /// `|s(x_k) - s(x_{k-1})|`, in log form, for the cell ending at node `k`.
    log_cell: Vec<f64>,
    s: Vec<f64>,
}

/// `2b/a^2`, the logarithmic derivative of `1/s'`.
fn drift_ratio(d: &Diffusion, x: f64) -> Result<f64, EvalError> {
    let a = d.vol_at(x)?;
    let b = d.drift_at(x)?;
    let r = 2.0 * b / (a * a);
    if r.is_finite() {
        Ok(r)
    } else {
        Err(EvalError::Infinite { x, value: r })
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Cubic Hermite on `[x0, x1]` with values and derivatives at the ends.
fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * d1
}

/// Distances from the anchor at which nodes are placed toward an endpoint.
fn side_offsets(c: f64, e: f64, scale: f64) -> Vec<f64> {
    let mut d = Vec::new();
    if e.is_finite() {
        let w = (e - c).abs();
        for j in 1..CORE_CELLS {
            d.push(w * j as f64 / CORE_CELLS as f64);
        }
        let last_core = w * (CORE_CELLS - 1) as f64 / CORE_CELLS as f64;
        for k in 1..=12 * LADDER_STEPS_PER_DECADE {
            let v = w * (1.0 - 10f64.powf(-(k as f64) / LADDER_STEPS_PER_DECADE as f64));
            if v > last_core {
                d.push(v);
            }
        }
    } else {
        let core = 10.0 * scale;
        for j in 1..=CORE_CELLS {
            d.push(core * j as f64 / CORE_CELLS as f64);
        }
        for k in 1..=11 * LADDER_STEPS_PER_DECADE {
            d.push(core * 10f64.powf(k as f64 / LADDER_STEPS_PER_DECADE as f64));
        }
    }
    d
}

impl ScaleMap {
    /// Scale function anchored at `anchor`, which must lie in the interval.
    pub fn new(diffusion: &Diffusion, anchor: f64) -> Result<Self, TransformError> {
        let iv = diffusion.interval.clone();
        if !(iv.contains_closed(anchor) && anchor.is_finite()) {
            return Err(TransformError::Anchor { anchor });
        }
        let settings = QuadSettings::default();
        let dr0 = drift_ratio(diffusion, anchor)?;
        let scale = iv.length_scale().max(anchor.abs());
        let right = Self::build_side(diffusion, anchor, iv.hi(), scale, &settings)?;
        let left = Self::build_side(diffusion, anchor, iv.lo(), scale, &settings)?;

        let n = left.xs.len() + right.xs.len() + 1;
        let mut xs = Vec::with_capacity(n);
        let mut log_sp = Vec::with_capacity(n);
        let mut dlog_sp = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        for k in (0..left.xs.len()).rev() {
            xs.push(left.xs[k]);
            log_sp.push(left.log_sp[k]);
            dlog_sp.push(left.dlog_sp[k]);
            s.push(left.s[k]);
        }
        xs.push(anchor);
        log_sp.push(0.0);
        dlog_sp.push(-dr0);
        s.push(0.0);
        for k in 0..right.xs.len() {
            xs.push(right.xs[k]);
            log_sp.push(right.log_sp[k]);
            dlog_sp.push(right.dlog_sp[k]);
            s.push(right.s[k]);
        }
        let mut map = ScaleMap {
            anchor,
            interval: iv.clone(),
            xs,
            log_sp,
            dlog_sp,
            s,
            left: Self::placeholder_end(Side::Left, iv.lo()),
            right: Self::placeholder_end(Side::Right, iv.hi()),
        };
        map.left = map.finish_end(Side::Left, &left, &settings);
        map.right = map.finish_end(Side::Right, &right, &settings);
        Ok(map)
    }

    /// Scale function anchored at the interval's default anchor.
    pub fn for_diffusion(diffusion: &Diffusion) -> Result<Self, TransformError> {
        Self::new(diffusion, diffusion.interval.anchor())
    }

    fn placeholder_end(side: Side, endpoint: f64) -> ScaleEnd {
        ScaleEnd {
            side,
            endpoint,
            test: TailOutcome::Converges { value: 0.0 },
            limit: 0.0,
            slope_out: 0.0,
            log_dist: None,
        }
    }

    fn build_side(
        d: &Diffusion,
        c: f64,
        e: f64,
        scale: f64,
        settings: &QuadSettings,
    ) -> Result<SideTable, TransformError> {
        let dir = if e > c { 1.0 } else { -1.0 };
        let mut t = SideTable {
            xs: Vec::new(),
            log_sp: Vec::new(),
            dlog_sp: Vec::new(),
            log_cell: Vec::new(),
            s: Vec::new(),
        };
        if e == c {
            return Ok(t);
        }
        let core_end = if e.is_finite() {
            (e - c).abs() * (CORE_CELLS - 1) as f64 / CORE_CELLS as f64
        } else {
            10.0 * scale
        };
        let (mut x0, mut l0, mut d0, mut s0) = (c, 0.0, -drift_ratio(d, c)?, 0.0);
        for off in side_offsets(c, e, scale) {
            let x1 = c + dir * off;
            let in_core = off <= core_end * (1.0 + 1e-12);
            let whole = integrate(|z| drift_ratio(d, z).unwrap_or(f64::NAN), x0, x1, settings);
            let stop = |err: TransformError| if in_core { Err(err) } else { Ok(()) };
            if !whole.value.is_finite() {
                stop(TransformError::NotIntegrable { lo: x0.min(x1), hi: x0.max(x1) })?;
                break;
            }
            let pieces = (whole.value.abs().ceil() as usize).max(1);
            if pieces > MAX_SUBCELLS && !in_core {
                break;
            }
            let mut failed = false;
            for p in 1..=pieces {
                let xa = x0;
                let xb = if p == pieces {
                    x1
                } else {
                    c + dir * (off - (x1 - x0).abs() * (pieces - p) as f64 / pieces as f64)
                };
                let seg = if pieces == 1 {
                    whole
                } else {
                    integrate(|z| drift_ratio(d, z).unwrap_or(f64::NAN), xa, xb, settings)
                };
                let db = match drift_ratio(d, xb) {
                    Ok(v) => -v,
                    Err(err) => {
                        stop(err.into())?;
                        failed = true;
                        break;
                    }
                };
                if !seg.value.is_finite() {
                    stop(TransformError::NotIntegrable { lo: xa.min(xb), hi: xa.max(xb) })?;
                    failed = true;
                    break;
                }
                let l1 = l0 - seg.value;
                // |s(xb) - s(xa)| by Gauss–Kronrod on the Hermite interpolant of log s'
                let mut acc = 0.0;
                for (y, w) in kronrod_nodes(xa, xb) {
                    let ly = hermite(xa, xb, l0, l1, d0, db, y);
                    acc += w.abs() * (ly - l0).exp();
                }
                let log_cell = l0 + acc.ln();
                let s1 = s0 + dir * log_cell.exp();
                if (s1 - s0).abs() <= 4.0 * f64::EPSILON * s1.abs() {
                    // s has saturated toward a finite limit
                    failed = true;
                    break;
                }
                if !s1.is_finite() || !l1.is_finite() {
                    stop(TransformError::NotIntegrable { lo: xa.min(xb), hi: xa.max(xb) })?;
                    failed = true;
                    break;
                }
                t.xs.push(xb);
                t.log_sp.push(l1);
                t.dlog_sp.push(db);
                t.log_cell.push(log_cell);
                t.s.push(s1);
                x0 = xb;
                l0 = l1;
                d0 = db;
                s0 = s1;
            }
            if failed {
                break;
            }
        }
        Ok(t)
    }

    fn finish_end(&self, side: Side, table: &SideTable, settings: &QuadSettings) -> ScaleEnd {
        let e = self.interval.endpoint(side);
        let n = self.xs.len();
        let (last, prev) = match side {
            Side::Left => (0, 1.min(n - 1)),
            Side::Right => (n - 1, n.saturating_sub(2)),
        };
        let out = if side == Side::Left { -1.0 } else { 1.0 };
        // outward slope of log s' beyond the table
        let slope_out = out * self.dlog_sp[last];
        let _ = prev;
        let x_n = self.xs[last];
        let sp_n = self.log_sp[last].exp();
        let remainder = if e.is_finite() {
            let dist = (e - x_n).abs();
            if slope_out.abs() * dist < 1e-12 {
                sp_n * dist
            } else {
                sp_n * ((slope_out * dist).exp_m1() / slope_out)
            }
        } else if slope_out < 0.0 {
            sp_n / -slope_out
        } else {
            f64::INFINITY
        };
        let mut end = ScaleEnd {
            side,
            endpoint: e,
            test: TailOutcome::Converges { value: 0.0 },
            limit: 0.0,
            slope_out,
            log_dist: None,
        };
        let test = if e == self.anchor {
            TailOutcome::Converges { value: 0.0 }
        } else {
            let this = ScaleMap {
                left: if side == Side::Left { end.clone() } else { self.left.clone() },
                right: if side == Side::Right { end.clone() } else { self.right.clone() },
                ..self.clone()
            };
            tail_integral(
                |x| this.s_prime(x),
                self.anchor,
                e,
                &DivergenceCriterion {
                    levels: if e.is_finite() { 10 } else { 12 },
                    ..DivergenceCriterion::default()
                },
                settings,
            )
        };
        end.test = test.clone();
        if test.is_finite() && remainder.is_finite() {
            end.limit = self.s[last] + out * remainder;
            // log |s(x_k) - s(e)| accumulated from the endpoint inward
            let mut log_dist = vec![f64::NEG_INFINITY; n];
            let k_cells = table.log_cell.len();
            let mut acc = remainder.ln();
            match side {
                Side::Right => {
                    log_dist[n - 1] = acc;
                    for j in (0..k_cells).rev() {
                        acc = log_add(acc, table.log_cell[j]);
                        log_dist[n - 1 - (k_cells - j)] = acc;
                    }
                    let base = n - 1 - k_cells;
                    for i in (0..base).rev() {
                        acc = log_add(acc, self.log_cell_between(i));
                        log_dist[i] = acc;
                    }
                }
                Side::Left => {
                    log_dist[0] = acc;
                    for j in (0..k_cells).rev() {
                        acc = log_add(acc, table.log_cell[j]);
                        log_dist[k_cells - j] = acc;
                    }
                    for i in k_cells + 1..n {
                        acc = log_add(acc, self.log_cell_between(i - 1));
                        log_dist[i] = acc;
                    }
                }
            }
            end.log_dist = Some(log_dist);
        } else {
            end.limit = out * f64::INFINITY;
        }
        end
    }

    fn log_sp_in_cell(&self, i: usize, x: f64) -> f64 {
        hermite(
            self.xs[i],
            self.xs[i + 1],
            self.log_sp[i],
            self.log_sp[i + 1],
            self.dlog_sp[i],
            self.dlog_sp[i + 1],
            x,
        )
    }

    /// `ln int_{xa}^{xb} s'` for `xa, xb` inside cell `i` (order irrelevant).
    fn log_cell_integral(&self, i: usize, xa: f64, xb: f64) -> f64 {
        if xa == xb {
            return f64::NEG_INFINITY;
        }
        let la = self.log_sp_in_cell(i, xa);
        let lb = self.log_sp_in_cell(i, xb);
        let top = la.max(lb);
        let mut acc = 0.0;
        for (y, w) in kronrod_nodes(xa, xb) {
            acc += w.abs() * (self.log_sp_in_cell(i, y) - top).exp();
        }
        top + acc.ln()
    }

    /// `ln |s(x_{i+1}) - s(x_i)|` recomputed from the stored nodes.
    fn log_cell_between(&self, i: usize) -> f64 {
        self.log_cell_integral(i, self.xs[i], self.xs[i + 1])
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn interval(&self) -> &Interval {
        &self.interval
    }

    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }

    pub fn node_values(&self) -> &[f64] {
        &self.s
    }

    pub fn end(&self, side: Side) -> &ScaleEnd {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    /// Image `s(I)` as `(s(l), s(r))`; infinite when the scale integral diverges.
    pub fn image(&self) -> (f64, f64) {
        (self.left.limit, self.right.limit)
    }

    fn cell(&self, x: f64) -> Option<usize> {
        let n = self.xs.len();
        if n < 2 || x < self.xs[0] || x > self.xs[n - 1] {
            return None;
        }
        let i = self.xs.partition_point(|&v| v <= x);
        Some(i.saturating_sub(1).min(n - 2))
    }

    pub fn log_s_prime(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if n == 1 {
            return self.dlog_sp[0] * (x - self.anchor);
        }
        match self.cell(x) {
            Some(i) => self.log_sp_in_cell(i, x),
            None if x < self.xs[0] => self.log_sp[0] + self.left.slope_out * (self.xs[0] - x),
            None => self.log_sp[n - 1] + self.right.slope_out * (x - self.xs[n - 1]),
        }
    }

    pub fn s_prime(&self, x: f64) -> f64 {
        self.log_s_prime(x).exp()
    }

    /// Integral of the extrapolated `s'` over a distance `t` beyond the end.
    fn beyond(&self, side: Side, t: f64) -> f64 {
        let (k, sp) = match side {
            Side::Left => (self.left.slope_out, self.log_sp[0].exp()),
            Side::Right => (self.right.slope_out, self.log_sp[self.xs.len() - 1].exp()),
        };
        if (k * t).abs() < 1e-12 {
            sp * t
        } else {
            sp * (k * t).exp_m1() / k
        }
    }

    fn s_in_cell(&self, i: usize, x: f64) -> f64 {
        self.s[i] + self.log_cell_integral(i, self.xs[i], x).exp()
    }

    /// `s(x)`, with `s(anchor) = 0`.
    pub fn s(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.interval.lo() {
            return self.left.limit;
        }
        if x >= self.interval.hi() {
            return self.right.limit;
        }
        match self.cell(x) {
            Some(i) => self.s_in_cell(i, x),
            None if x < self.xs[0] => self.s[0] - self.beyond(Side::Left, self.xs[0] - x),
            None => self.s[n - 1] + self.beyond(Side::Right, x - self.xs[n - 1]),
        }
    }

    /// `|s(x) - s(e)|` computed without cancellation, or `None` when `s(e)` is infinite.
    pub fn distance_to_end(&self, x: f64, side: Side) -> Option<f64> {
        let end = self.end(side);
        let log_dist = end.log_dist.as_ref()?;
        let n = self.xs.len();
        let e = end.endpoint;
        let beyond_table = match side {
            Side::Left => x < self.xs[0],
            Side::Right => x > self.xs[n - 1],
        };
        if beyond_table {
            // remaining mass between x and e under the extrapolated s'
            let (xn, k, sp) = match side {
                Side::Left => (self.xs[0], self.left.slope_out, self.log_sp[0]),
                Side::Right => (self.xs[n - 1], self.right.slope_out, self.log_sp[n - 1]),
            };
            let t = (x - xn).abs();
            let ls = sp + k * t;
            if e.is_finite() {
                let dist = (e - x).abs();
                return Some(if (k * dist).abs() < 1e-12 {
                    ls.exp() * dist
                } else {
                    ls.exp() * (k * dist).exp_m1() / k
                });
            }
            return Some(ls.exp() / -k);
        }
        let i = self.cell(x)?;
        let ld = match side {
            Side::Left => log_add(log_dist[i], self.log_cell_integral(i, self.xs[i], x)),
            Side::Right => log_add(log_dist[i + 1], self.log_cell_integral(i, x, self.xs[i + 1])),
        };
        Some(ld.exp())
    }

    /// `s^{-1}(m)`, clamped to the closed interval.
    pub fn inverse(&self, m: f64) -> f64 {
        let n = self.xs.len();
        let (lo, hi) = (self.interval.lo(), self.interval.hi());
        if m <= self.left.limit {
            return lo;
        }
        if m >= self.right.limit {
            return hi;
        }
        if m < self.s[0] {
            let k = self.left.slope_out;
            let sp = self.log_sp[0].exp();
            let need = self.s[0] - m;
            let t = if k.abs() < 1e-300 {
                need / sp
            } else {
                (k * need / sp).ln_1p() / k
            };
            return (self.xs[0] - t).max(lo);
        }
        if m > self.s[n - 1] {
            let k = self.right.slope_out;
            let sp = self.log_sp[n - 1].exp();
            let need = m - self.s[n - 1];
            let t = if k.abs() < 1e-300 {
                need / sp
            } else {
                (k * need / sp).ln_1p() / k
            };
            return if t.is_finite() { (self.xs[n - 1] + t).min(hi) } else { hi };
        }
        let i = self.s.partition_point(|&v| v <= m).saturating_sub(1).min(n - 2);
        let (mut a, mut b) = (self.xs[i], self.xs[i + 1]);
        if self.s[i] == m {
            return a;
        }
        // safeguarded Newton; s is increasing with derivative s'
        let mut x = a + (b - a) * (m - self.s[i]) / (self.s[i + 1] - self.s[i]);
        for _ in 0..100 {
            let f = self.s_in_cell(i, x) - m;
            if f == 0.0 {
                return x;
            }
            if f > 0.0 {
                b = x;
            } else {
                a = x;
            }
            let step = x - f / self.log_sp_in_cell(i, x).exp();
            x = if step > a && step < b { step } else { 0.5 * (a + b) };
            if b - a <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) || (x - step).abs() <= f64::EPSILON * x.abs() {
                break;
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EndpointKind, Interval};

    fn unit_drift_bm() -> Diffusion {
        let iv = Interval::with_kinds(0.0, f64::INFINITY, EndpointKind::Absorbing, EndpointKind::Natural).unwrap();
        Diffusion::brownian(1.0, 1.0, iv)
    }

    #[test]
    fn zero_drift_is_identity() {
        let d = Diffusion::brownian(1.0, 0.0, Interval::real_line());
        let s = ScaleMap::new(&d, 0.5).unwrap();
        for x in [-30.0, -1.0, 0.5, 2.0, 100.0] {
            assert!((s.s(x) - (x - 0.5)).abs() < 1e-9 * (1.0 + x.abs()), "{x}: {}", s.s(x));
            assert!((s.s_prime(x) - 1.0).abs() < 1e-12);
            assert!((s.inverse(s.s(x)) - x).abs() < 1e-9 * (1.0 + x.abs()));
        }
        assert_eq!(s.image(), (f64::NEG_INFINITY, f64::INFINITY));
    }

    #[test]
    fn unit_drift_closed_form() {
        let s = ScaleMap::new(&unit_drift_bm(), 0.0).unwrap();
        for x in [0.0f64, 0.1, 0.7, 2.0, 5.0, 12.0] {
            let exact = -0.5 * (-2.0 * x).exp_m1();
            assert!((s.s(x) - exact).abs() < 1e-11, "{x}: {} vs {exact}", s.s(x));
            assert!((s.s_prime(x) - (-2.0 * x).exp()).abs() < 1e-10 * (-2.0 * x).exp());
        }
        let (lo, hi) = s.image();
        assert!(lo.abs() < 1e-15);
        assert!((hi - 0.5).abs() < 1e-10);
        let d = s.distance_to_end(3.0, Side::Right).unwrap();
        assert!((d / (0.5 * (-6.0f64).exp()) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn exponential_bm_power_law() {
        let (sig, mu) = (0.2, 0.05);
        let s = ScaleMap::new(&Diffusion::exponential_bm(sig, mu), 1.0).unwrap();
        let p = 1.0 - 2.0 * mu / (sig * sig);
        for x in [0.05f64, 0.3, 1.7, 10.0, 400.0] {
            let exact = (x.powf(p) - 1.0) / p;
            assert!(((s.s(x) - exact) / exact).abs() < 1e-6, "{x}: {} vs {exact}", s.s(x));
        }
        assert_eq!(s.image().0, f64::NEG_INFINITY);
        assert!((s.image().1 - (-1.0 / p)).abs() < 1e-6);
    }

    #[test]
    fn strictly_increasing_and_invertible() {
        let s = ScaleMap::new(&Diffusion::exponential_bm(0.3, -0.1), 1.0).unwrap();
        let v = s.node_values();
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        for &x in s.nodes().iter().step_by(97) {
            let back = s.inverse(s.s(x));
            assert!((back - x).abs() <= 1e-9 * x.abs().max(1e-3), "{x} -> {back}");
        }
    }
}
