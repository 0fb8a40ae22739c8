use std::path::PathBuf;

/// Errors produced by the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: edge endpoint {endpoint} is not a known node")]
    DanglingEndpoint {
        path: PathBuf,
        line: usize,
        endpoint: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty objective: no labeled nodes contribute to the loss")]
    EmptyObjective,

    #[error("optimization diverged: non-finite values{}", round_suffix(*.round))]
    Diverged { round: Option<usize> },

    #[error("all trust scores underflowed below 1e-300; lower lambda_s")]
    TrustUnderflow,

    #[error("malformed message: {0}")]
    Message(String),
}

fn round_suffix(round: Option<usize>) -> String {
    match round {
        Some(r) => format!(" at round {r}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
