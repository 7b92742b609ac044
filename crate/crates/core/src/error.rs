use thiserror::Error;

/// Errors raised across the crate.
///
/// Every variant maps to a stable string code through [`Error::code`], which
/// the command-line front end uses in its machine-readable error records.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("the gamma-divergence objective is undefined at gamma = 0; use the log-likelihood objective")]
    GammaZero,

    #[error("every weighted density power underflowed; the objective is -inf")]
    DegenerateObjective,

    #[error("effective sample size {ess:.6} is below the required minimum {min_ess:.6}")]
    InsufficientEffectiveSampleSize { ess: f64, min_ess: f64 },

    #[error("weighted moment matrix is singular (pivot ratio {pivot_ratio:.3e})")]
    SingularMomentMatrix { pivot_ratio: f64 },

    #[error("sandwich Jacobian is numerically singular (condition number {condition:.3e})")]
    SingularJacobian { condition: f64 },

    #[error("score unavailable for gamma = {gamma}, bandwidth = {bandwidth}: {reason}")]
    ScoreUnavailable {
        gamma: f64,
        bandwidth: f64,
        reason: String,
    },

    #[error("tuning failed in the {step} step: every grid point was skipped ({})", .reasons.join("; "))]
    SelectionFailed { step: String, reasons: Vec<String> },

    #[error("all normalized outlier weights underflowed jointly")]
    DegenerateWeights,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("location {index}: {source}")]
    AtLocation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    /// Stable identifier for this error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Input(_) => "input_error",
            Error::Config(_) => "config_error",
            Error::GammaZero => "gamma_zero",
            Error::DegenerateObjective => "degenerate_objective",
            Error::InsufficientEffectiveSampleSize { .. } => "insufficient_effective_sample_size",
            Error::SingularMomentMatrix { .. } => "singular_moment_matrix",
            Error::SingularJacobian { .. } => "singular_jacobian",
            Error::ScoreUnavailable { .. } => "score_unavailable",
            Error::SelectionFailed { .. } => "selection_failed",
            Error::DegenerateWeights => "degenerate_weights",
            Error::Numerical(_) => "numerical_error",
            Error::AtLocation { source, .. } => source.code(),
            Error::Io(_) => "io_error",
            Error::Format(_) => "format_error",
        }
    }

    /// Exit status used by the binary. Input problems are 2, configuration 3,
    /// numerical/estimation failures 4, i/o 5.
    pub fn exit_status(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Format(_) => 2,
            Error::Config(_) | Error::GammaZero => 3,
            Error::Io(_) => 5,
            Error::AtLocation { source, .. } => source.exit_status(),
            _ => 4,
        }
    }

    pub(crate) fn at(self, index: usize) -> Error {
        match self {
            e @ Error::AtLocation { .. } => e,
            e => Error::AtLocation {
                index,
                source: Box::new(e),
            },
        }
    }

    /// Strips any location annotation.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLocation { source, .. } => source.root(),
            e => e,
        }
    }
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

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
