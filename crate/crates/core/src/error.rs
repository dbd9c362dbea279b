use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape {shape:?} implies {expected} elements but data has {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("tensor has {axes} axis labels for rank {rank}")]
    RankMismatch { axes: usize, rank: usize },
    #[error("duplicate axis label `{0}`")]
    DuplicateLabel(String),
    #[error("unknown axis label `{0}`")]
    UnknownLabel(String),
    #[error("dimension mismatch on `{a}`/`{b}`: {da} vs {db}")]
    DimensionMismatch {
        a: String,
        b: String,
        da: usize,
        db: usize,
    },
    #[error("axis dimension must be positive")]
    ZeroDimension,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid row axes: {0}")]
    InvalidRowAxes(String),
    #[error("matricization is rank deficient (smallest singular value {smallest:e})")]
    RankDeficient { smallest: f64 },
    #[error("normalization underflow: divisor magnitude {0:e}")]
    Underflow(f64),
    #[error("contraction plan needs {bytes} bytes for intermediate {labels:?}, cap is {cap}")]
    MemoryCap {
        bytes: usize,
        cap: usize,
        labels: Vec<String>,
    },
    #[error("lattice: {0}")]
    Lattice(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("hamiltonian: {0}")]
    Hamiltonian(String),
    #[error("architecture: {0}")]
    Architecture(String),
    #[error("subsystem of {size} sites exceeds the dense limit {limit}")]
    TooLarge { size: usize, limit: usize },
    #[error("bitstring length {actual} does not match R = {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("fixed point did not converge: residual {residual:e}, gap estimate {gap:e}")]
    NoConvergence { residual: f64, gap: f64 },
    #[error("eigensolver did not converge: residual {0:e}")]
    EigenNoConvergence(f64),
    #[error("state norm deviates from one by {0:e}")]
    NotNormalized(f64),
    #[error("invalid spectrum: {0}")]
    Spectrum(String),
    #[error("training diverged at step {step}: E_b rose by {rise}")]
    Diverged { step: usize, rise: f64 },
    #[error("retraction failed after {0} halvings")]
    RetractionFailed(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("zero-norm MPS")]
    ZeroNorm,
}

pub type Result<T> = std::result::Result<T, Error>;
