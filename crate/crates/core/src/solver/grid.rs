use serde::Serialize;

use crate::model::{Diffusion, EndpointKind, ProblemSpec, Side};
use crate::transform::classify_diffusion;

use super::SolverError;

pub const MIN_NODES: usize = 16;
const GRADED_DECADES: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Uniform,
    Logarithmic,
    /// Geometric in the distance to one end, uniform beyond.
    Graded,
    /// Caller-supplied nodes.
    Explicit,
}

/// Strictly increasing solver nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    nodes: Vec<f64>,
    spacing: Spacing,
}

impl Grid {
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Grid, SolverError> {
        check_bounds(lo, hi, n)?;
        let nodes = (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        Grid::build(nodes, Spacing::Uniform)
    }

    pub fn logarithmic(lo: f64, hi: f64, n: usize) -> Result<Grid, SolverError> {
        check_bounds(lo, hi, n)?;
        if lo <= 0.0 {
            return Err(SolverError::Grid(format!("logarithmic grid needs lo > 0, got {lo}")));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let nodes = (0..n)
            .map(|i| match i {
                0 => lo,
                _ if i == n - 1 => hi,
                _ => (a + (b - a) * i as f64 / (n - 1) as f64).exp(),
            })
            .collect();
        Grid::build(nodes, Spacing::Logarithmic)
    }

    /// Half of the nodes geometric in the distance to the `toward` end,
    /// from `10^-decades * near` out to `near`, the rest uniform. The end
    /// itself is a node.
    pub fn graded(lo: f64, hi: f64, n: usize, toward: Side, near: f64, decades: f64) -> Result<Grid, SolverError> {
        check_bounds(lo, hi, n)?;
        let width = hi - lo;
        if !(near > 0.0 && near < width && decades > 0.0) {
            return Err(SolverError::Grid(format!(
                "graded grid needs 0 < near < {width} and decades > 0, got {near}, {decades}"
            )));
        }
        let geo = n / 2;
        let uni = n - 1 - geo;
        let mut dist = Vec::with_capacity(n);
        dist.push(0.0);
        for k in 0..geo {
            let t = k as f64 / (geo - 1) as f64;
            dist.push(near * 10f64.powf(-decades * (1.0 - t)));
        }
        for k in 1..=uni {
            dist.push(if k == uni { width } else { near + (width - near) * k as f64 / uni as f64 });
        }
        let nodes = match toward {
            Side::Left => dist.iter().map(|d| lo + d).collect(),
            Side::Right => dist.iter().rev().map(|d| hi - d).collect(),
        };
        Grid::build(nodes, Spacing::Graded)
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Grid, SolverError> {
        Grid::build(nodes, Spacing::Explicit)
    }

    fn build(nodes: Vec<f64>, spacing: Spacing) -> Result<Grid, SolverError> {
        if nodes.len() < MIN_NODES {
            return Err(SolverError::Grid(format!(
                "need at least {MIN_NODES} nodes, got {}",
                nodes.len()
            )));
        }
        if let Some(x) = nodes.iter().find(|x| !x.is_finite()) {
            return Err(SolverError::Grid(format!("non-finite node {x}")));
        }
        if let Some(i) = (1..nodes.len()).find(|&i| nodes[i] <= nodes[i - 1]) {
            return Err(SolverError::Grid(format!(
                "nodes not strictly increasing at index {i}: {} then {}",
                nodes[i - 1],
                nodes[i]
            )));
        }
        Ok(Grid { nodes, spacing })
    }

    /// Default grid for a problem.
    ///
    /// `(0, inf)` with a natural left end gets a log grid on
    /// `[c/50, 50 c]`. Otherwise infinite ends are truncated ten
    /// standard-deviation equivalents `10 a/sqrt(beta) + 10 |b|/beta` from
    /// the anchor `c`, absorbing endpoints are nodes and natural finite
    /// endpoints are approached to within `1e-3` of the distance to `c`.
    /// Near an absorbing endpoint where `theta d^2 / a^2` stays bounded away
    /// from zero (`d` the distance to it) the grid is graded over
    /// many decades, so that the number of arrivals needed to get there is
    /// resolved.
    pub fn for_problem(p: &ProblemSpec, n: usize, spacing: Option<Spacing>) -> Result<Grid, SolverError> {
        let kinds = resolved_kinds(&p.diffusion);
        let iv = p.interval();
        let c = iv.anchor();
        let half_line = iv.lo() == 0.0 && !iv.hi().is_finite() && kinds[0] != EndpointKind::Absorbing;
        let spacing = spacing.unwrap_or(if half_line { Spacing::Logarithmic } else { Spacing::Uniform });
        let (lo, hi) = if half_line {
            (c / 50.0, 50.0 * c)
        } else {
            let a = p.diffusion.vol_at(c)?.abs();
            let b = p.diffusion.drift_at(c)?.abs();
            let reach = 10.0 * a / p.beta.sqrt() + 10.0 * b / p.beta;
            let end = |side: Side, sign: f64| {
                let e = iv.endpoint(side);
                let k = kinds[side as usize];
                if !e.is_finite() {
                    c + sign * reach
                } else if k == EndpointKind::Absorbing {
                    e
                } else {
                    e + 1e-3 * (c - e)
                }
            };
            (end(Side::Left, -1.0), end(Side::Right, 1.0))
        };
        if spacing == Spacing::Logarithmic {
            return Grid::logarithmic(lo, hi, n);
        }
        for side in [Side::Left, Side::Right] {
            if kinds[side as usize] == EndpointKind::Absorbing && singular_rate(p, side) {
                let near = 0.05 * (c - iv.endpoint(side)).abs();
                return Grid::graded(lo, hi, n, side, near, GRADED_DECADES);
            }
        }
        Grid::uniform(lo, hi, n)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.nodes[0]
    }

    pub fn hi(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    /// Index `i` with `nodes[i] <= x < nodes[i + 1]`, clamped to the cells.
    pub fn cell(&self, x: f64) -> usize {
        let n = self.nodes.len();
        match self.nodes.partition_point(|&v| v <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        }
    }

    /// Index of the node closest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let i = self.cell(x);
        if (x - self.nodes[i]).abs() <= (self.nodes[i + 1] - x).abs() {
            i
        } else {
            i + 1
        }
    }
}

/// `theta d^2 / a^2` at two small distances `d` from the endpoint is not small.
fn singular_rate(p: &ProblemSpec, side: Side) -> bool {
    let iv = p.interval();
    let e = iv.endpoint(side);
    let inward = match side {
        Side::Left => 1.0,
        Side::Right => -1.0,
    };
    let scale = (iv.anchor() - e).abs();
    [1e-6, 1e-9].iter().all(|&f| {
        let d = f * scale;
        let x = e + inward * d;
        match (p.rate_at(x), p.diffusion.vol_at(x)) {
            (Ok(t), Ok(a)) => t.is_finite() && t * d * d / (a * a) >= 1e-3,
            _ => false,
        }
    })
}

fn check_bounds(lo: f64, hi: f64, n: usize) -> Result<(), SolverError> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(SolverError::Grid(format!("grid bounds must satisfy lo < hi, got [{lo}, {hi}]")));
    }
    if n < MIN_NODES {
        return Err(SolverError::Grid(format!("need at least {MIN_NODES} nodes, got {n}")));
    }
    Ok(())
}

/// Declared endpoint kinds, with unclassified finite endpoints classified.
pub(crate) fn resolved_kinds(d: &Diffusion) -> [EndpointKind; 2] {
    let iv = &d.interval;
    let mut kinds = [iv.left_kind, iv.right_kind];
    let needs = [Side::Left, Side::Right]
        .iter()
        .any(|&s| kinds[s as usize] == EndpointKind::Unclassified && iv.endpoint(s).is_finite());
    if needs {
        if let Ok(found) = classify_diffusion(d) {
            for (k, f) in kinds.iter_mut().zip(found.iter()) {
                if *k == EndpointKind::Unclassified {
                    *k = f.kind;
                }
            }
        }
    }
    kinds
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Interval, ScalarFunction};

    #[test]
    fn constructors_validate() {
        assert!(Grid::uniform(0.0, 1.0, 15).is_err());
        assert!(Grid::logarithmic(0.0, 1.0, 32).is_err());
        assert!(Grid::from_nodes((0..20).map(|i| (i % 10) as f64).collect()).is_err());
        let g = Grid::logarithmic(0.02, 50.0, 4001).unwrap();
        assert_eq!(g.lo(), 0.02);
        assert_eq!(g.hi(), 50.0);
        assert_eq!(g.cell(0.02), 0);
        assert_eq!(g.cell(50.0), 3999);
        assert_eq!(g.nearest(1e-6), 0);
    }

    #[test]
    fn default_grids() {
        let p = ProblemSpec::new(
            Diffusion::exponential_bm(0.2, 0.05),
            ScalarFunction::parse("max(x - 1, 0)").unwrap(),
            ScalarFunction::constant(1.0),
            0.1,
        )
        .unwrap();
        let g = Grid::for_problem(&p, 2001, None).unwrap();
        assert_eq!(g.spacing(), Spacing::Logarithmic);
        assert!((g.lo() - 0.02).abs() < 1e-15 && (g.hi() - 50.0).abs() < 1e-12);

        let iv = Interval::with_kinds(0.0, f64::INFINITY, EndpointKind::Absorbing, EndpointKind::Natural).unwrap();
        let p = ProblemSpec::new(
            Diffusion::brownian(1.0, 0.0, iv),
            ScalarFunction::parse("x").unwrap(),
            ScalarFunction::constant(1.0),
            1.0,
        )
        .unwrap();
        let g = Grid::for_problem(&p, 101, None).unwrap();
        assert_eq!(g.spacing(), Spacing::Uniform);
        assert_eq!(g.lo(), 0.0);
        assert!((g.hi() - 11.0).abs() < 1e-12);
    }

    #[test]
    fn grades_toward_singular_rate() {
        let iv = Interval::with_kinds(0.0, f64::INFINITY, EndpointKind::Absorbing, EndpointKind::Natural).unwrap();
        let p = ProblemSpec::new(
            Diffusion::brownian(1.0, 0.0, iv),
            ScalarFunction::constant(0.0),
            ScalarFunction::parse("x^(-2)").unwrap(),
            1.0,
        )
        .unwrap();
        let g = Grid::for_problem(&p, 2001, None).unwrap();
        assert_eq!(g.spacing(), Spacing::Graded);
        assert_eq!(g.len(), 2001);
        assert_eq!(g.lo(), 0.0);
        assert!(g.nodes()[1] < 1e-60);
        let r = Grid::graded(0.0, 1.0, 64, Side::Right, 0.1, 5.0).unwrap();
        assert_eq!(r.hi(), 1.0);
        assert!(1.0 - r.nodes()[62] < 1e-5);
    }
}
