use thiserror::Error;

/// Errors raised by the estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate covariance: Cholesky failed at pivot {pivot}")]
    DegenerateCovariance { pivot: usize },

    #[error("degenerate innovation covariance (pivot {pivot})")]
    DegenerateInnovation { pivot: usize },

    #[error("unreducible backward form: {0}")]
    UnreducibleBackwardForm(String),

    #[error("mixture is not normalized (total weight {total})")]
    Unnormalized { total: f64 },

    #[error("mixture has no components")]
    EmptyMixture,

    #[error("uncovered domain point r = {0}")]
    UncoveredDomainPoint(f64),

    #[error("quadrature order {0} out of range 1..=200")]
    QuadratureOrder(usize),

    #[error("eta-noise variance must be positive for the quadrature form (got {0})")]
    NonPositiveOutputNoise(f64),

    #[error("no likelihood support for measurement y = {y}")]
    NoLikelihoodSupport { y: f64 },

    #[error("particle degeneracy: all weights vanished")]
    ParticleDegeneracy,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid nonlinearity: {0}")]
    InvalidNonlinearity(String),

    #[error("mismatched grids")]
    MismatchedGrids,

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("at t = {t}: {source}")]
    AtTime {
        t: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps the error with the 1-based time index at which it occurred.
    pub fn at(self, t: usize) -> Error {
        match self {
            e @ Error::AtTime { .. } => e,
            e => Error::AtTime { t, source: Box::new(e) },
        }
    }

    /// Strips any time annotation.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTime { source, .. } => source.root(),
            e => e,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
