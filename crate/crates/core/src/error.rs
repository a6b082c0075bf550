use thiserror::Error;

/// Failure while parsing a component expression.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },
}

/// Failure while evaluating an expression at a point.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root of a negative number")]
    NegativeSqrt,
    #[error("non-finite intermediate value")]
    NonFinite,
    #[error("variable x{index} is not available at a point of dimension {dim}")]
    MissingVariable { index: usize, dim: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("field {field}, component {component}: {source}")]
    Eval {
        field: usize,
        component: usize,
        source: EvalError,
    },
    #[error("expression uses x{index} but the family has dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate basis: |Y_I| = {norm:e}")]
    DegenerateBasis { norm: f64 },
    #[error("point has rank zero; the orbit is locally a single point")]
    DegeneratePoint,
    #[error("flow diverged at t = {time}: |x| = {norm:e}")]
    Divergence { time: f64, norm: f64 },
    #[error("chart block condition {condition:e} exceeds bound; shrink the radius")]
    ShrinkRadius { condition: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("could not leave kink locus at point {0:?}")]
    StuckOnKink(Vec<f64>),
}

pub type Result<T> = std::result::Result<T, Error>;
