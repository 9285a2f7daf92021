use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    /// The prediction log lacks records for (sample_id, set signature) pairs.
    #[error("replay coverage gap: {} missing pair(s), first: {}", .missing.len(), fmt_first(.missing))]
    ReplayCoverage { missing: Vec<(String, String)> },

    #[error("config error: {0}")]
    Config(String),

    #[error("run failed: {0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_first(missing: &[(String, String)]) -> String {
    match missing.first() {
        Some((id, sig)) => format!("({id}, [{sig}])"),
        None => "none".to_string(),
    }
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by bad input rather than by the run itself.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::Construction(_)
                | Error::Parse { .. }
                | Error::Validation(_)
                | Error::ReplayCoverage { .. }
                | Error::Config(_)
        )
    }
}
