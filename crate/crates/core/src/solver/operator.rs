use crate::model::{psi_value, EndpointKind, ProblemSpec, ScalarFunction, Side};

use super::grid::{resolved_kinds, Grid};
use super::value::{Extrapolation, ValueFunction};
use super::{BoundaryCondition, BoundaryPolicy, SolverError};

/// Pivots below this multiple of the diagonal are treated as singular.
const PIVOT_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
enum End {
    /// The node is an absorbing endpoint: `u = kappa h` there.
    Absorbing { kappa: f64 },
    Truncated(BoundaryCondition),
}

#[derive(Debug, Clone)]
struct Factored {
    sub: Vec<f64>,
    inv_pivot: Vec<f64>,
    sup_scaled: Vec<f64>,
}

impl Factored {
    fn new(sub: &[f64], diag: &[f64], sup: &[f64], nodes: &[f64]) -> Result<Factored, SolverError> {
        let m = diag.len();
        let mut inv_pivot = vec![0.0; m];
        let mut sup_scaled = vec![0.0; m];
        let mut prev = 0.0;
        for i in 0..m {
            let pivot = diag[i] - if i > 0 { sub[i] * prev } else { 0.0 };
            if !pivot.is_finite() || pivot.abs() <= PIVOT_FLOOR * diag[i].abs().max(f64::MIN_POSITIVE) {
                return Err(SolverError::SingularSystem {
                    node: i + 1,
                    x: nodes[i + 1],
                    pivot,
                });
            }
            inv_pivot[i] = 1.0 / pivot;
            prev = sup[i] * inv_pivot[i];
            sup_scaled[i] = prev;
        }
        Ok(Factored {
            sub: sub.to_vec(),
            inv_pivot,
            sup_scaled,
        })
    }

    fn solve_in_place(&self, rhs: &mut [f64]) {
        let m = rhs.len();
        rhs[0] *= self.inv_pivot[0];
        for i in 1..m {
            rhs[i] = (rhs[i] - self.sub[i] * rhs[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..m - 1).rev() {
            rhs[i] -= self.sup_scaled[i] * rhs[i + 1];
        }
    }
}

/// Discretised first-arrival operator `h -> E[e^{-beta T} h(X_T)]` on a grid.
///
/// Solves `a^2 u''/2 + b u' - (beta + theta) u + theta h = 0` with the
/// three-point second difference, and a drift difference that is central
/// where that keeps the off-diagonals non-negative and upwind otherwise.
/// The tridiagonal matrix is factored once.
#[derive(Debug, Clone)]
pub struct GOperator {
    grid: Grid,
    beta: f64,
    /// Capped rates at every node.
    rates: Vec<f64>,
    /// Generator weights `(lower, upper)` at interior nodes.
    weights: Vec<(f64, f64)>,
    ends: [End; 2],
    factored: Factored,
    upwind_nodes: usize,
}

impl GOperator {
    pub fn new(p: &ProblemSpec, grid: &Grid, boundary: &BoundaryPolicy, rate_cap: f64) -> Result<GOperator, SolverError> {
        if !(rate_cap.is_finite() && rate_cap > 0.0) {
            return Err(SolverError::Settings(format!("rate cap must be positive and finite, got {rate_cap}")));
        }
        let xs = grid.nodes();
        let n = xs.len();
        let iv = p.interval();
        for &x in [xs[0], xs[n - 1]].iter() {
            if !iv.contains_closed(x) {
                return Err(SolverError::Grid(format!("node {x} lies outside the interval")));
            }
        }
        let kinds = resolved_kinds(&p.diffusion);
        let mut ends = [End::Truncated(BoundaryCondition::LinearExtrapolation); 2];
        for (side, node) in [(Side::Left, xs[0]), (Side::Right, xs[n - 1])] {
            let e = iv.endpoint(side);
            ends[side as usize] = if node == e {
                if kinds[side as usize] != EndpointKind::Absorbing {
                    return Err(SolverError::Grid(format!(
                        "node {e} sits on a {:?} endpoint; only absorbing endpoints may be nodes",
                        kinds[side as usize]
                    )));
                }
                End::Absorbing {
                    kappa: psi_value(1.0, p.rate_at(e)?, p.beta),
                }
            } else {
                match boundary.get(side) {
                    Some(bc) => End::Truncated(bc),
                    None => return Err(SolverError::MissingBoundary { side }),
                }
            };
        }
        if let End::Truncated(BoundaryCondition::PowerLaw { .. }) = ends[0] {
            require_same_sign(xs[0], xs[1])?;
        }
        if let End::Truncated(BoundaryCondition::PowerLaw { .. }) = ends[1] {
            require_same_sign(xs[n - 2], xs[n - 1])?;
        }

        let mut rates = Vec::with_capacity(n);
        for &x in xs {
            let t = p.rate_capped(x, rate_cap)?;
            if t.is_nan() || t < 0.0 {
                return Err(SolverError::Settings(format!("rate {t} at {x} is not a non-negative number")));
            }
            rates.push(t);
        }
        let mut weights = vec![(0.0, 0.0); n];
        let mut upwind_nodes = 0;
        for i in 1..n - 1 {
            let (hm, hp) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
            let a = p.diffusion.vol_at(xs[i])?;
            let b = p.diffusion.drift_at(xs[i])?;
            let a2 = a * a;
            let span = hm + hp;
            weights[i] = if b * hp <= a2 && -b * hm <= a2 {
                ((a2 - b * hp) / (hm * span), (a2 + b * hm) / (hp * span))
            } else {
                upwind_nodes += 1;
                let (l, r) = (a2 / (hm * span), a2 / (hp * span));
                if b > 0.0 {
                    (l, r + b / hp)
                } else {
                    (l - b / hm, r)
                }
            };
        }
        let mut op = GOperator {
            grid: grid.clone(),
            beta: p.beta,
            rates,
            weights,
            ends,
            factored: Factored {
                sub: vec![],
                inv_pivot: vec![],
                sup_scaled: vec![],
            },
            upwind_nodes,
        };
        op.factored = op.factor(None)?;
        Ok(op)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Interior nodes where the drift difference is one-sided.
    pub fn upwind_nodes(&self) -> usize {
        self.upwind_nodes
    }

    pub fn extrapolation(&self) -> [Extrapolation; 2] {
        self.ends.map(|e| match e {
            End::Absorbing { .. } => Extrapolation::None,
            End::Truncated(bc) => bc.into(),
        })
    }

    fn end_coefficient(&self, side: Side) -> f64 {
        let xs = self.grid.nodes();
        let n = xs.len();
        match self.ends[side as usize] {
            End::Absorbing { kappa } => kappa,
            End::Truncated(BoundaryCondition::LinearExtrapolation) => match side {
                Side::Left => (xs[1] - xs[0]) / (xs[2] - xs[1]),
                Side::Right => (xs[n - 1] - xs[n - 2]) / (xs[n - 2] - xs[n - 3]),
            },
            End::Truncated(BoundaryCondition::PowerLaw { exponent }) => match side {
                Side::Left => (xs[0] / xs[1]).powf(exponent),
                Side::Right => (xs[n - 1] / xs[n - 2]).powf(exponent),
            },
        }
    }

    /// Factors the interior system. Nodes flagged in `continuation` drop the
    /// rate from the diagonal (the row for `h = u` there).
    fn factor(&self, continuation: Option<&[bool]>) -> Result<Factored, SolverError> {
        let n = self.grid.len();
        let m = n - 2;
        let mut sub = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut sup = vec![0.0; m];
        for k in 0..m {
            let i = k + 1;
            let (l, r) = self.weights[i];
            let cont = continuation.is_some_and(|c| c[i]);
            let theta = if cont { 0.0 } else { self.rates[i] };
            sub[k] = -l;
            sup[k] = -r;
            diag[k] = l + r + self.beta + theta;
        }
        let (l1, _) = self.weights[1];
        let (_, rn) = self.weights[n - 2];
        match self.ends[0] {
            End::Absorbing { .. } => {}
            End::Truncated(BoundaryCondition::LinearExtrapolation) => {
                let rho = self.end_coefficient(Side::Left);
                diag[0] -= l1 * (1.0 + rho);
                sup[0] += l1 * rho;
            }
            End::Truncated(BoundaryCondition::PowerLaw { .. }) => diag[0] -= l1 * self.end_coefficient(Side::Left),
        }
        match self.ends[1] {
            End::Absorbing { .. } => {}
            End::Truncated(BoundaryCondition::LinearExtrapolation) => {
                let rho = self.end_coefficient(Side::Right);
                diag[m - 1] -= rn * (1.0 + rho);
                sub[m - 1] += rn * rho;
            }
            End::Truncated(BoundaryCondition::PowerLaw { .. }) => diag[m - 1] -= rn * self.end_coefficient(Side::Right),
        }
        Factored::new(&sub, &diag, &sup, self.grid.nodes())
    }

    fn solve(&self, factored: &Factored, h: &[f64], continuation: Option<&[bool]>) -> Vec<f64> {
        let n = self.grid.len();
        let mut rhs: Vec<f64> = (1..n - 1)
            .map(|i| {
                if continuation.is_some_and(|c| c[i]) {
                    0.0
                } else {
                    self.rates[i] * h[i]
                }
            })
            .collect();
        let left = match self.ends[0] {
            End::Absorbing { kappa } => {
                let u0 = kappa * h[0];
                rhs[0] += self.weights[1].0 * u0;
                Some(u0)
            }
            End::Truncated(_) => None,
        };
        let right = match self.ends[1] {
            End::Absorbing { kappa } => {
                let un = kappa * h[n - 1];
                rhs[n - 3] += self.weights[n - 2].1 * un;
                Some(un)
            }
            End::Truncated(_) => None,
        };
        factored.solve_in_place(&mut rhs);
        let mut u = Vec::with_capacity(n);
        u.push(0.0);
        u.extend_from_slice(&rhs);
        u.push(0.0);
        let nonneg = h.iter().all(|&v| v >= 0.0);
        u[0] = left.unwrap_or_else(|| self.truncated_value(Side::Left, &u, nonneg));
        u[n - 1] = right.unwrap_or_else(|| self.truncated_value(Side::Right, &u, nonneg));
        u
    }

    fn truncated_value(&self, side: Side, u: &[f64], nonneg: bool) -> f64 {
        let n = u.len();
        let c = self.end_coefficient(side);
        let (near, far) = match side {
            Side::Left => (u[1], u[2]),
            Side::Right => (u[n - 2], u[n - 3]),
        };
        match self.ends[side as usize] {
            // extrapolation can undershoot where a nonnegative solution decays toward zero
            End::Truncated(BoundaryCondition::LinearExtrapolation) => {
                let v = (1.0 + c) * near - c * far;
                if nonneg {
                    v.max(0.0)
                } else {
                    v
                }
            }
            _ => c * near,
        }
    }

    /// Applies the operator to node values `h`.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        assert_eq!(h.len(), self.grid.len(), "one value per node");
        self.solve(&self.factored, h, None)
    }

    /// Solves the fixed-point equation `u = G(max(g, u))` for a fixed
    /// stop/continue split: `continuation[i]` marks nodes where `h = u`.
    pub(crate) fn solve_policy(&self, g: &[f64], continuation: &[bool]) -> Result<Vec<f64>, SolverError> {
        let f = self.factor(Some(continuation))?;
        Ok(self.solve(&f, g, Some(continuation)))
    }

    pub fn apply_values(&self, h: &ValueFunction) -> Result<ValueFunction, SolverError> {
        if h.grid() != &self.grid {
            return Err(SolverError::Grid("value function lives on a different grid".into()));
        }
        Ok(self.wrap(self.apply(h.values())))
    }

    pub fn apply_function(&self, h: &ScalarFunction) -> Result<ValueFunction, SolverError> {
        let mut hv = Vec::with_capacity(self.grid.len());
        for &x in self.grid.nodes() {
            hv.push(h.eval_finite(x)?);
        }
        Ok(self.wrap(self.apply(&hv)))
    }

    pub(crate) fn wrap(&self, values: Vec<f64>) -> ValueFunction {
        let [l, r] = self.extrapolation();
        ValueFunction::new(self.grid.clone(), values).with_extrapolation(l, r)
    }
}

fn require_same_sign(a: f64, b: f64) -> Result<(), SolverError> {
    if a * b > 0.0 {
        Ok(())
    } else {
        Err(SolverError::Settings(format!(
            "power-law boundary needs end nodes of one sign, got {a} and {b}"
        )))
    }
}

/// One application of the first-arrival operator to `h`.
pub fn g_operator(
    p: &ProblemSpec,
    h: &ScalarFunction,
    grid: &Grid,
    boundary: &BoundaryPolicy,
) -> Result<ValueFunction, SolverError> {
    GOperator::new(p, grid, boundary, p.default_rate_cap())?.apply_function(h)
}
