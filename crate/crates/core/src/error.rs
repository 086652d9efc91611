use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("problem has no components")]
    EmptyComponentList,

    #[error("invalid constants: {0}")]
    InvalidConstants(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("linear system (I + gamma*A) is singular; A is not positive semidefinite")]
    SingularSystem,

    #[error("inner solver exceeded its budget of {budget} iterations (residual {residual:e})")]
    MaxInnerIterations { budget: usize, residual: f64 },

    #[error("invalid batch size s={s} for n={n}")]
    InvalidBatchSize { s: usize, n: usize },

    #[error("enumerating C({n},{s}) = {count} subsets exceeds the cap of {cap}")]
    EnumerationTooLarge { n: usize, s: usize, count: u128, cap: usize },

    #[error("init_gradients=provided but no valid gradient table was supplied")]
    MissingProvidedGradients,

    #[error("prox of component {index} failed: {source}")]
    ProxFailure {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("reference solver exceeded {budget} iterations (gradient norm {grad_norm:e})")]
    MaxIterations { budget: usize, grad_norm: f64 },

    #[error("eps ({eps:e}) must be positive and not above psi0 ({psi0:e})")]
    EpsNotBelowPsi0 { eps: f64, psi0: f64 },

    #[error("known solution is not stationary: |sum grad| = {norm:e} > {bound:e}")]
    NotStationary { norm: f64, bound: f64 },

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("data file {0} contains no samples")]
    EmptyFile(PathBuf),

    #[error("line {line}: feature index {index} exceeds dimension {dim}")]
    InconsistentDimension { line: usize, index: usize, dim: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
