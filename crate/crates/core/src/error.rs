use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerically degenerate: {0}")]
    NumericDegenerate(String),

    #[error("knot allocation infeasible: {0}")]
    AllocationInfeasible(String),

    #[error("objective is flat over the search range; parameter not identifiable")]
    NonIdentifiable,

    #[error("fixed-point accumulator overflow after {photons} photons")]
    Overflow { photons: usize },

    #[error("IRF phasor magnitude {0:e} too small for correction")]
    DegenerateIrf(f64),

    #[error("phasor point (g = {g}, s = {s}) lies outside the semicircle readout domain")]
    OutsideSemicircle { g: f64, s: f64 },

    #[error("Fisher information matrix is singular (condition number {0:e})")]
    SingularInformation(f64),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::InvalidInput(_)
            | Error::InsufficientData { .. }
            | Error::Format { .. }
            | Error::Io(_)
            | Error::Csv(_) => ErrorClass::Data,
            Error::NumericDegenerate(_)
            | Error::AllocationInfeasible(_)
            | Error::NonIdentifiable
            | Error::Overflow { .. }
            | Error::DegenerateIrf(_)
            | Error::OutsideSemicircle { .. }
            | Error::SingularInformation(_) => ErrorClass::Numeric,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
