use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{op} requires a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid matrix layout: {0}")]
    InvalidLayout(String),

    #[error("matrix is not Hermitian (residual {residual:e}) in {what}")]
    NotHermitian { what: &'static str, residual: f64 },

    #[error("invalid density operator: {0}")]
    InvalidState(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("parameter index {index} out of range for {count} parameters")]
    ParameterIndex { index: usize, count: usize },

    #[error("parameter vector has length {got}, model expects {expected}")]
    ParameterCount { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("maximum number of steps ({0}) exceeded")]
    MaxStepsExceeded(usize),

    #[error("step size underflow at t = {t}: h = {h:e}")]
    StepUnderflow { t: f64, h: f64 },

    #[error("non-finite solver state at t = {0}")]
    NonFiniteState(f64),

    #[error("eigensolver did not converge after {0} sweeps")]
    EigenNoConvergence(usize),

    #[error("index {index} belongs to a degenerate cluster of size {size}; use the clustered derivative")]
    DegenerateIndex { index: usize, size: usize },

    #[error("index set {0:?} is not a maximal degeneracy cluster")]
    ClusterNotMaximal(Vec<usize>),

    #[error("eigenvector cotangent depends on the gauge of cluster {cluster:?} (component {magnitude:e})")]
    GaugeDependence { cluster: Vec<usize>, magnitude: f64 },

    #[error("negative eigenvalue {0:e} in density operator")]
    NegativeEigenvalue(f64),

    #[error("cost gradient disagrees with finite differences (relative error {rel_err:e} along direction {direction})")]
    CostGradientMismatch { direction: usize, rel_err: f64 },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by bad inputs rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        if let Error::Stage { source, .. } = self {
            return source.is_validation();
        }
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::NotSquare { .. }
                | Error::InvalidLayout(_)
                | Error::InvalidState(_)
                | Error::InvalidModel(_)
                | Error::ParameterIndex { .. }
                | Error::ParameterCount { .. }
                | Error::InvalidConfig(_)
                | Error::Parse { .. }
                | Error::NotHermitian { .. }
        )
    }
}
