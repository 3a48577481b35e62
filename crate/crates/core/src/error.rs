use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("exponent out of range: {0}")]
    Domain(String),

    #[error("field `{0}` has unbounded support; supply a truncation box")]
    UnboundedSupport(String),

    #[error("unknown catalog field `{0}`")]
    UnknownField(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time must be positive, got {0}")]
    NonpositiveTime(f64),

    #[error("empty time window [{t0}, {t}]")]
    EmptyWindow { t0: f64, t: f64 },

    #[error("alpha[{index}] = {value} is not positive")]
    NonpositiveAlpha { index: usize, value: f64 },

    #[error("singular weight: {0}")]
    SingularWeight(String),

    #[error("malformed block specification: {0}")]
    MalformedBlock(String),

    #[error("deterministic quadrature is limited to d = 1 and chains of length <= 3 ({0})")]
    SizeCap(String),

    #[error("estimate indistinguishable from zero at t = {t}: {estimate} +/- {std_error}")]
    IndistinguishableFromZero { t: f64, estimate: f64, std_error: f64 },

    #[error("drift `{0}` has no analytic gradient")]
    MissingGradient(String),

    #[error("drift `{0}` has no analytic vorticity")]
    MissingVorticity(String),

    #[error("ensemble carries no jacobians")]
    MissingJacobians,

    #[error("lattice spacing {spacing} is too coarse for delta = {delta}")]
    LatticeTooCoarse { spacing: f64, delta: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("symplectic residual needs an even dimension, got {0}")]
    OddDimension(usize),

    #[error("test field support is not covered by the pairing lattice")]
    SupportNotCovered,

    #[error("test field is not divergence free")]
    NotDivergenceFree,

    #[error("one-form lacks the analytic derivative `{0}`")]
    MissingFormDerivative(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed trajectory dump: {0}")]
    Dump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
