use thiserror::Error;

/// Errors raised by the library.
///
/// Validation errors correspond to inputs that violate a hypothesis (dimension gate,
/// colliding peaks, conformally flat point, malformed geometry); numerical errors
/// correspond to a computation that could not meet its own accuracy contract.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {0} is not supported: the construction requires N >= 7")]
    Dimension(usize),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("peaks {0} and {1} collide (distance {2:e})")]
    Collision(usize, usize, f64),

    #[error("Weyl norm must be positive at the concentration point, got {0}")]
    ConformallyFlat(f64),

    #[error("Riemann tensor violates {symmetry} (relative defect {defect:e})")]
    Symmetry { symmetry: &'static str, defect: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the caller's input rather than the numerics.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Numerical(_) | Error::Io(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
