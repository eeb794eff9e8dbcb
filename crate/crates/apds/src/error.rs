use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("scheduler produced a grant for unknown cid {0}")]
    UnknownGrant(crate::types::Cid),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("scenario parse error: {0}")]
    Parse(String),
}
