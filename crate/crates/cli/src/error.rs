use spiked_landscape::Error as LibError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Lib(#[from] LibError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for usage and domain errors, 1 for everything that went wrong at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::Lib(e) => match e {
                LibError::InvalidParams(_)
                | LibError::Domain(_)
                | LibError::NoSolution(_)
                | LibError::NotBracketed(_)
                | LibError::BoundarySaddle
                | LibError::Budget { .. } => 2,
                _ => 1,
            },
            _ => 1,
        }
    }
}
