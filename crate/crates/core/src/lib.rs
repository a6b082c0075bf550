//! Numerical toolkit for orbits of families of locally Lipschitz vector
//! fields: rank functionals, involutivity audits, subunit flows, control
//! distances and exponential-map charts.

pub mod builtins;
pub mod charts;
pub mod error;
pub mod expr;
pub mod field;
pub mod flows;
pub mod involutivity;
pub mod mollify;
pub mod multivector;
pub mod orbits;
pub mod sampling;

pub use error::{Error, EvalError, ParseError, Result};
pub use expr::Expr;
pub use field::{Bounds, FieldFamily, PointFrame, SmoothField, VectorField};
