//! Error type shared across the crate.

/// Errors produced by data ingestion, estimation, and inference routines.
///
/// The variants split into two broad families that front-ends may want to
/// distinguish: input problems ([`Error::Io`], [`Error::Csv`],
/// [`Error::Spec`], [`Error::Config`]) and numerical problems encountered
/// on otherwise valid input ([`Error::RankDeficient`], [`Error::Numerical`],
/// [`Error::DegenerateInference`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(String),
    #[error("model specification error: {0}")]
    Spec(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("rank deficiency: {0}")]
    RankDeficient(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("degenerate inference: {0}")]
    DegenerateInference(String),
}

impl Error {
    /// True when the error reflects bad input (data, spec, configuration)
    /// rather than a numerical failure during computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::Csv(_) | Error::Spec(_) | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
