use serde::Serialize;

use super::grid::Grid;
use super::BoundaryCondition;

/// How a value function continues past the first or last node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Extrapolation {
    /// The node is an endpoint of the interval; nothing lies beyond it.
    None,
    /// Continue the last grid segment.
    Linear,
    /// `u(x) = u(x_end) (x / x_end)^exponent`.
    PowerLaw { exponent: f64 },
}

impl From<BoundaryCondition> for Extrapolation {
    fn from(bc: BoundaryCondition) -> Self {
        match bc {
            BoundaryCondition::LinearExtrapolation => Extrapolation::Linear,
            BoundaryCondition::PowerLaw { exponent } => Extrapolation::PowerLaw { exponent },
        }
    }
}

/// Node values on a grid, read back by linear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueFunction {
    grid: Grid,
    values: Vec<f64>,
    extrapolation: [Extrapolation; 2],
}

impl ValueFunction {
    /// # Panics
    /// If `values` and `grid` differ in length.
    pub fn new(grid: Grid, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len(), "one value per node");
        ValueFunction {
            grid,
            values,
            extrapolation: [Extrapolation::Linear; 2],
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        ValueFunction::new(grid.clone(), values)
    }

    pub fn with_extrapolation(mut self, left: Extrapolation, right: Extrapolation) -> Self {
        self.extrapolation = [left, right];
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn nodes(&self) -> &[f64] {
        self.grid.nodes()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn extrapolation(&self) -> [Extrapolation; 2] {
        self.extrapolation
    }

    /// Value at `x`: linear between nodes, the extrapolation rule outside
    /// (clamped at zero), and the end value where no rule applies.
    pub fn eval(&self, x: f64) -> f64 {
        let xs = self.grid.nodes();
        let n = xs.len();
        let (end, rule, i, j) = if x < xs[0] {
            (0, self.extrapolation[0], 0, 1)
        } else if x > xs[n - 1] {
            (n - 1, self.extrapolation[1], n - 1, n - 2)
        } else {
            let i = self.grid.cell(x);
            let t = (x - xs[i]) / (xs[i + 1] - xs[i]);
            return self.values[i] + t * (self.values[i + 1] - self.values[i]);
        };
        let v = match rule {
            Extrapolation::None => self.values[end],
            Extrapolation::Linear => {
                let slope = (self.values[j] - self.values[i]) / (xs[j] - xs[i]);
                self.values[i] + slope * (x - xs[i])
            }
            Extrapolation::PowerLaw { exponent } => self.values[end] * (x / xs[end]).powf(exponent),
        };
        v.max(0.0)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|self - f|` over the nodes inside `[lo, hi]`.
    pub fn sup_error_on(&self, f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        self.nodes()
            .iter()
            .zip(&self.values)
            .filter(|(&x, _)| x >= lo && x <= hi)
            .fold(0.0, |m, (&x, &v)| m.max((v - f(x)).abs()))
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> ValueFunction {
        let values = self.nodes().iter().zip(&self.values).map(|(&x, &v)| f(x, v)).collect();
        ValueFunction {
            grid: self.grid.clone(),
            values,
            extrapolation: self.extrapolation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_and_extrapolation() {
        let g = Grid::uniform(1.0, 2.0, 21).unwrap();
        let v = ValueFunction::from_fn(&g, |x| 3.0 * x);
        assert!((v.eval(1.333) - 3.999).abs() < 1e-12);
        assert!((v.eval(3.0) - 9.0).abs() < 1e-12);
        assert_eq!(v.eval(-10.0), 0.0);
        let v = v.with_extrapolation(Extrapolation::None, Extrapolation::PowerLaw { exponent: -1.0 });
        assert_eq!(v.eval(0.5), 3.0);
        assert!((v.eval(4.0) - 3.0).abs() < 1e-12);
    }
}
