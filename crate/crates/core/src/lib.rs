//! Poisson optimal stopping for one-dimensional diffusions.
//!
//! Stopping is allowed only at the event times of a Poisson process whose
//! rate may depend on the state. The crate computes value functions by
//! finite-difference value iteration, provides closed-form reference values,
//! estimates first-arrival values by simulation, and checks monotonicity and
//! convexity of the results.

pub mod analytic;
pub mod cli;
pub mod mc;
pub mod model;
pub mod quad;
pub mod shape;
pub mod solver;
pub mod transform;
