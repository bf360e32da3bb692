use thiserror::Error;

/// Errors raised across the library. Variants follow the failure classes the
/// operations distinguish (bad inputs vs. refused work vs. broken contracts).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate threshold: {0}")]
    DegenerateThreshold(String),
    #[error("characterization error: {0}")]
    Characterization(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
