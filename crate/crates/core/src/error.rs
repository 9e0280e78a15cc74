use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The closed-loop matrix has an eigenvalue with real part >= -tol.
    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:.6e})")]
    NotHurwitz { abscissa: f64 },

    #[error("gain is not stabilizing (spectral abscissa of A - BK is {abscissa:.6e})")]
    NotStabilizing { abscissa: f64 },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("input block G22 is singular (condition number {cond:.3e})")]
    SingularBlock { cond: f64 },

    #[error("eigenvalue computation failed to converge")]
    Eigen,

    #[error("no convergence after {iterations} iterations (last step {last_step:.3e})")]
    NonConvergence { iterations: usize, last_step: f64 },

    #[error("pair (A, B) is not controllable (rank {rank} < {n})")]
    Uncontrollable { rank: usize, n: usize },

    #[error("pair (A, Q^1/2) is not observable (rank {rank} < {n})")]
    Unobservable { rank: usize, n: usize },

    #[error("invalid cost weights: {0}")]
    InvalidCost(String),

    #[error("no stabilizing gain found within horizon {horizon}")]
    StabilizationFailed { horizon: f64 },

    #[error("simulation diverged at t = {time:.6}")]
    Divergence { time: f64 },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed data file: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
