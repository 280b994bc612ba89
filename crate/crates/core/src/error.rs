use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A length or extent that must be a power of two was not.
    NotPowerOfTwo(usize),
    /// Two shapes that had to agree did not.
    ShapeMismatch { expected: String, found: String },
    /// A geometry violated one of its invariants.
    InvalidGeometry(String),
    /// An argument was outside its documented domain.
    InvalidArgument(String),
    /// An iterative solver diverged or was misconfigured.
    Divergence { iteration: usize, objective: f64 },
    /// Conjugate gradients hit its iteration cap.
    CgNotConverged { iterations: usize, residual: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NotPowerOfTwo(n) => write!(f, "length {n} is not a power of two"),
            Error::ShapeMismatch { expected, found } => {
                write!(f, "shape mismatch: expected {expected}, found {found}")
            }
            Error::InvalidGeometry(msg) => write!(f, "invalid geometry: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Divergence { iteration, objective } => write!(
                f,
                "objective increased for 3 consecutive iterations (iteration {iteration}, objective {objective:e}); step size or lambda misconfigured"
            ),
            Error::CgNotConverged { iterations, residual } => write!(
                f,
                "conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})"
            ),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn mismatch(expected: impl fmt::Display, found: impl fmt::Display) -> Error {
    use alloc::string::ToString;
    Error::ShapeMismatch { expected: expected.to_string(), found: found.to_string() }
}
