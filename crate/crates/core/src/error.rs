use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid primitive: {0}")]
    InvalidPrimitive(String),

    #[error("inner solve did not converge (gradient norm {grad_norm:e} after {steps} steps)")]
    NotConverged { grad_norm: f64, steps: usize },

    #[error("inner Hessian factorization failed")]
    SingularHessian,

    #[error("unknown link {0}")]
    UnknownLink(usize),

    #[error("invalid reference: {0}")]
    InvalidReference(String),

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{0}")]
    Semantic(String),

    #[error("collision pair {pair} at step {step}: {source}")]
    PairSolve {
        pair: String,
        step: usize,
        #[source]
        source: Box<Error>,
    },
}
