//! Problem description: expressions, scalar functions, diffusions, and the
//! numerical check of the standing assumptions.

mod bundled;
mod expr;
mod function;
mod problem;
mod validate;

pub use bundled::{bundled, bundled_names, bundled_source};
pub use expr::{parse_expression, BinOp, Expr, Func1, Func2, ParseError, ParseErrorKind};
pub use function::{Builtin, CustomFn, Derived, EvalError, ExtReal, Piece, ScalarFunction, Table};
pub use problem::{Diffusion, EndpointKind, Interval, ModelError, ProblemSpec, Side};
pub(crate) use function::cap_infinite;
pub(crate) use problem::psi_value;
pub use validate::{validate_problem, Assumption, AssumptionReport, Finding, Status};
