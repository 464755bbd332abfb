use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::expr::{parse_expression, Expr, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EvalError {
    #[error("x = {x} lies outside the domain")]
    Domain { x: f64 },
    #[error("evaluation at x = {x} produced NaN")]
    NotFinite { x: f64 },
    #[error("non-finite value {value} at x = {x} where a finite value is required")]
    Infinite { x: f64, value: f64 },
}

/// Extended real used for interval endpoints and barrier levels.
///
/// Serialised as a JSON number, or as the strings `"inf"` / `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ExtReal(pub f64);

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(ExtReal(v)),
            Raw::Text(t) => match t.trim() {
                "inf" | "+inf" | "infinity" => Ok(ExtReal(f64::INFINITY)),
                "-inf" | "-infinity" => Ok(ExtReal(f64::NEG_INFINITY)),
                other => other
                    .parse::<f64>()
                    .map(ExtReal)
                    .map_err(|_| serde::de::Error::custom(format!("invalid extended real '{other}'"))),
            },
        }
    }
}

/// Named parametric families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "snake_case")]
pub enum Builtin {
    Constant { value: f64 },
    Linear { slope: f64, intercept: f64 },
    /// `coef * x^exponent`
    Power { coef: f64, exponent: f64 },
    /// `(x - strike)^+`
    CallPayoff { strike: f64 },
    /// `low` for `x <= barrier`, `high` above it. Either level may be `+inf`.
    IndicatorBarrier {
        barrier: f64,
        low: ExtReal,
        high: ExtReal,
    },
}

impl Builtin {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Builtin::Constant { value } => value,
            Builtin::Linear { slope, intercept } => slope * x + intercept,
            Builtin::Power { coef, exponent } => coef * x.powf(exponent),
            Builtin::CallPayoff { strike } => (x - strike).max(0.0),
            Builtin::IndicatorBarrier { barrier, low, high } => {
                if x <= barrier {
                    low.0
                } else {
                    high.0
                }
            }
        }
    }
}

/// One branch of a piecewise function: covers `[lo, hi)`, or the single
/// point `{lo}` when `lo == hi`. The last piece also covers its right end.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub expr: Expr,
}

/// Monotone cubic (Fritsch–Carlson) interpolant with linear extrapolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Table {
    /// `xs` must be strictly increasing with at least two entries.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        assert!(xs.len() >= 2 && xs.len() == ys.len(), "table needs >= 2 matching nodes");
        debug_assert!(xs.windows(2).all(|w| w[0] < w[1]), "table nodes not increasing");
        let n = xs.len();
        let secants: Vec<f64> = (0..n - 1)
            .map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]))
            .collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for i in 1..n - 1 {
            let (d0, d1) = (secants[i - 1], secants[i]);
            if d0 * d1 <= 0.0 {
                slopes[i] = 0.0;
            } else {
                // weighted harmonic mean keeps the interpolant monotone
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                let w0 = 2.0 * h1 + h0;
                let w1 = h1 + 2.0 * h0;
                slopes[i] = (w0 + w1) / (w0 / d0 + w1 / d1);
            }
        }
        Table { xs, ys, slopes }
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            let s = (self.ys[1] - self.ys[0]) / (self.xs[1] - self.xs[0]);
            return self.ys[0] + s * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            let s = (self.ys[n - 1] - self.ys[n - 2]) / (self.xs[n - 1] - self.xs[n - 2]);
            return self.ys[n - 1] + s * (x - self.xs[n - 1]);
        }
        let i = self.xs.partition_point(|&v| v <= x) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[i] + h10 * h * self.slopes[i] + h01 * self.ys[i + 1] + h11 * h * self.slopes[i + 1]
    }
}

/// Functions built from other functions by the coordinate transforms.
#[derive(Debug, Clone, PartialEq)]
pub enum Derived {
    /// `outer(inner(x))`
    Compose(ScalarFunction, ScalarFunction),
    Product(ScalarFunction, ScalarFunction),
    /// `vol(x) / sqrt(beta + min(rate(x), cap))`
    TimeChangedVol {
        vol: ScalarFunction,
        rate: ScalarFunction,
        beta: f64,
        cap: f64,
    },
    /// `drift(x) / (beta + rate(x))`, an infinite rate counting as `cap`
    TimeChangedDrift {
        drift: ScalarFunction,
        rate: ScalarFunction,
        beta: f64,
        cap: f64,
    },
}

/// A real function of one real variable.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarFunction {
    Expr(Expr),
    Piecewise(Vec<Piece>),
    Builtin(Builtin),
    Table(Arc<Table>),
    Derived(Arc<Derived>),
    Custom(CustomFn),
}

/// Closure-backed function used for tabulated coordinate maps.
#[derive(Clone)]
pub struct CustomFn {
    label: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl CustomFn {
    pub fn new(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        CustomFn {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl fmt::Debug for CustomFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomFn({})", self.label)
    }
}

impl PartialEq for CustomFn {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.f, &other.f)
    }
}

/// `theta` unless it is infinite, then `cap`.
pub(crate) fn cap_infinite(theta: f64, cap: f64) -> f64 {
    if theta.is_infinite() {
        cap
    } else {
        theta
    }
}

impl ScalarFunction {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        parse_expression(text).map(ScalarFunction::Expr)
    }

    pub fn constant(value: f64) -> Self {
        ScalarFunction::Builtin(Builtin::Constant { value })
    }

    pub fn linear(slope: f64, intercept: f64) -> Self {
        ScalarFunction::Builtin(Builtin::Linear { slope, intercept })
    }

    /// Piecewise function; pieces are sorted and must be contiguous.
    pub fn piecewise(mut pieces: Vec<Piece>) -> Result<Self, String> {
        if pieces.is_empty() {
            return Err("piecewise function needs at least one piece".into());
        }
        pieces.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
        for p in &pieces {
            if !(p.lo <= p.hi) {
                return Err(format!("piece [{}, {}) is empty or reversed", p.lo, p.hi));
            }
        }
        for w in pieces.windows(2) {
            if w[0].hi != w[1].lo {
                return Err(format!(
                    "pieces [{}, {}) and [{}, {}) are not contiguous",
                    w[0].lo, w[0].hi, w[1].lo, w[1].hi
                ));
            }
            if w[0].lo == w[0].hi && w[1].lo == w[1].hi {
                return Err(format!("duplicate point piece at {}", w[0].lo));
            }
        }
        Ok(ScalarFunction::Piecewise(pieces))
    }

    pub fn table(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        ScalarFunction::Table(Arc::new(Table::new(xs, ys)))
    }

    pub fn compose(outer: ScalarFunction, inner: ScalarFunction) -> Self {
        ScalarFunction::Derived(Arc::new(Derived::Compose(outer, inner)))
    }

    pub fn custom(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarFunction::Custom(CustomFn::new(label, f))
    }

    pub fn product(a: ScalarFunction, b: ScalarFunction) -> Self {
        ScalarFunction::Derived(Arc::new(Derived::Product(a, b)))
    }

    /// Raw evaluation: NaN is an error, infinities are passed through.
    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        let v = self.eval_raw(x)?;
        if v.is_nan() {
            return Err(EvalError::NotFinite { x });
        }
        Ok(v)
    }

    /// Evaluation that additionally rejects infinite values.
    pub fn eval_finite(&self, x: f64) -> Result<f64, EvalError> {
        let v = self.eval(x)?;
        if v.is_infinite() {
            return Err(EvalError::Infinite { x, value: v });
        }
        Ok(v)
    }

    fn eval_raw(&self, x: f64) -> Result<f64, EvalError> {
        Ok(match self {
            ScalarFunction::Expr(e) => e.eval(x),
            ScalarFunction::Builtin(b) => b.eval(x),
            ScalarFunction::Table(t) => t.eval(x),
            ScalarFunction::Custom(c) => (c.f)(x),
            ScalarFunction::Piecewise(pieces) => {
                let last = pieces.len() - 1;
                let piece = pieces.iter().enumerate().find(|(i, p)| {
                    if p.lo == p.hi {
                        x == p.lo
                    } else {
                        p.lo <= x && (x < p.hi || (*i == last && x == p.hi))
                    }
                });
                match piece {
                    Some((_, p)) => p.expr.eval(x),
                    None => return Err(EvalError::Domain { x }),
                }
            }
            ScalarFunction::Derived(d) => match d.as_ref() {
                Derived::Compose(outer, inner) => outer.eval(inner.eval(x)?)?,
                Derived::Product(a, b) => a.eval(x)? * b.eval(x)?,
                Derived::TimeChangedVol {
                    vol,
                    rate,
                    beta,
                    cap,
                } => vol.eval(x)? / (beta + cap_infinite(rate.eval(x)?, *cap)).sqrt(),
                Derived::TimeChangedDrift {
                    drift,
                    rate,
                    beta,
                    cap,
                } => drift.eval(x)? / (beta + cap_infinite(rate.eval(x)?, *cap)),
            },
        })
    }

    /// Constant value when the function is syntactically constant.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            ScalarFunction::Builtin(Builtin::Constant { value }) => Some(*value),
            ScalarFunction::Builtin(Builtin::Linear { slope, intercept }) if *slope == 0.0 => {
                Some(*intercept)
            }
            ScalarFunction::Expr(e) if e.is_constant() => Some(e.eval(0.0)),
            _ => None,
        }
    }

    /// True when the function is the zero function by construction.
    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    /// Text form when the function has a problem-file representation.
    pub fn render(&self) -> Option<String> {
        match self {
            ScalarFunction::Expr(e) => Some(e.to_string()),
            _ => None,
        }
    }
}

impl fmt::Display for ScalarFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFunction::Expr(e) => write!(f, "{e}"),
            ScalarFunction::Builtin(b) => write!(f, "{b:?}"),
            ScalarFunction::Piecewise(p) => write!(f, "piecewise({} pieces)", p.len()),
            ScalarFunction::Table(t) => write!(f, "table({} nodes)", t.xs.len()),
            ScalarFunction::Derived(_) => write!(f, "derived"),
            ScalarFunction::Custom(c) => write!(f, "{}", c.label),
        }
    }
}

// Problem-file representation: grammar text, {"piecewise": [...]}, or {"builtin": ...}.

#[derive(Serialize, Deserialize)]
struct PieceDef {
    interval: [ExtReal; 2],
    expr: String,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FunctionDef {
    Text(String),
    Piecewise { piecewise: Vec<PieceDef> },
    Builtin(Builtin),
}

impl Serialize for ScalarFunction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let def = match self {
            ScalarFunction::Expr(e) => FunctionDef::Text(e.to_string()),
            ScalarFunction::Builtin(b) => FunctionDef::Builtin(b.clone()),
            ScalarFunction::Piecewise(pieces) => FunctionDef::Piecewise {
                piecewise: pieces
                    .iter()
                    .map(|p| PieceDef {
                        interval: [ExtReal(p.lo), ExtReal(p.hi)],
                        expr: p.expr.to_string(),
                    })
                    .collect(),
            },
            other => {
                return Err(serde::ser::Error::custom(format!(
                    "{other} has no problem-file representation"
                )))
            }
        };
        def.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScalarFunction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match FunctionDef::deserialize(d)? {
            FunctionDef::Text(t) => ScalarFunction::parse(&t)
                .map_err(|e| D::Error::custom(format!("in expression \"{t}\": {e}"))),
            FunctionDef::Builtin(b) => Ok(ScalarFunction::Builtin(b)),
            FunctionDef::Piecewise { piecewise } => {
                let mut pieces = Vec::with_capacity(piecewise.len());
                for p in piecewise {
                    let expr = parse_expression(&p.expr)
                        .map_err(|e| D::Error::custom(format!("in expression \"{}\": {e}", p.expr)))?;
                    pieces.push(Piece {
                        lo: p.interval[0].0,
                        hi: p.interval[1].0,
                        expr,
                    });
                }
                ScalarFunction::piecewise(pieces).map_err(D::Error::custom)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_dispatch() {
        let f: ScalarFunction = serde_json::from_str(
            r#"{"piecewise": [{"interval": [0, 1], "expr": "0"}, {"interval": [1, "inf"], "expr": "x"}]}"#,
        )
        .unwrap();
        assert_eq!(f.eval(2.0).unwrap(), 2.0);
        assert_eq!(f.eval(0.5).unwrap(), 0.0);
        assert_eq!(f.eval(1.0).unwrap(), 1.0);
        assert!(matches!(f.eval(-1.0), Err(EvalError::Domain { .. })));
    }

    #[test]
    fn point_piece() {
        let f = ScalarFunction::piecewise(vec![
            Piece { lo: 0.0, hi: 0.0, expr: parse_expression("1").unwrap() },
            Piece { lo: 0.0, hi: f64::INFINITY, expr: parse_expression("x^(-2)").unwrap() },
        ])
        .unwrap();
        assert_eq!(f.eval(0.0).unwrap(), 1.0);
        assert_eq!(f.eval(0.5).unwrap(), 4.0);
    }

    #[test]
    fn piecewise_rejects_gaps() {
        let gap = ScalarFunction::piecewise(vec![
            Piece { lo: 0.0, hi: 1.0, expr: Expr::Var },
            Piece { lo: 2.0, hi: 3.0, expr: Expr::Var },
        ]);
        assert!(gap.is_err());
    }

    #[test]
    fn builtins() {
        let call = ScalarFunction::Builtin(Builtin::CallPayoff { strike: 1.0 });
        assert_eq!(call.eval(3.0).unwrap(), 2.0);
        let barrier: ScalarFunction = serde_json::from_str(
            r#"{"builtin": "indicator_barrier", "barrier": 1, "low": "inf", "high": 0}"#,
        )
        .unwrap();
        assert_eq!(barrier.eval(0.5).unwrap(), f64::INFINITY);
        assert_eq!(barrier.eval(1.5).unwrap(), 0.0);
        assert!(barrier.eval_finite(0.5).is_err());
    }

    #[test]
    fn nan_is_an_error() {
        let f = ScalarFunction::parse("log(x)").unwrap();
        assert!(matches!(f.eval(-1.0), Err(EvalError::NotFinite { .. })));
    }

    #[test]
    fn table_is_monotone_and_exact_at_nodes() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x * x).collect();
        let t = Table::new(xs.clone(), ys.clone());
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(t.eval(*x), *y);
        }
        let mut prev = f64::NEG_INFINITY;
        for i in 0..1000 {
            let v = t.eval(i as f64 * 0.0095);
            assert!(v >= prev);
            prev = v;
        }
    }
}
