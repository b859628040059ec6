use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("self-loop ({0}, {0}) in input edge list")]
    SelfLoopInInput(usize),

    #[error("node {0} is isolated; degree normalization is undefined")]
    IsolatedNode(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("matrix of size {n} exceeds eigensolver cap {cap}")]
    MatrixTooLarge { n: usize, cap: usize },

    #[error("matrix is not symmetric (|a_ij - a_ji| = {0:e})")]
    NotSymmetric(f64),

    #[error("Jacobi iteration did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("operator {0} is not a Laplacian")]
    NotALaplacian(&'static str),

    #[error("signal has zero energy")]
    ZeroSignal,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("every node is isolated")]
    AllNodesIsolated,

    #[error("graph has no edges")]
    EmptyGraph,

    #[error("class {0} has no nodes")]
    EmptyClass(usize),

    #[error("mask selects no nodes")]
    EmptyMask,

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("non-finite value produced by {0}")]
    NonFiniteValue(&'static str),

    #[error("loss node has shape {0:?}, expected a scalar")]
    LossNotScalar((usize, usize)),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("inconsistent node count: {0}")]
    InconsistentNodeCount(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn parse(path: impl ToString, line: usize, msg: impl ToString) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            msg: msg.to_string(),
        }
    }

    pub(crate) fn io(path: impl ToString, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_string(),
            source,
        }
    }
}
