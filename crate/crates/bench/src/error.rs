use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("spec line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("unknown preset `{name}`; available: {}", available.join(", "))]
    UnknownPreset {
        name: String,
        available: Vec<String>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Artifact { path: PathBuf, detail: String },
    #[error("all {0} runs failed")]
    AllRunsFailed(usize),
    #[error(transparent)]
    Core(#[from] deepgnn::Error),
}

impl BenchError {
    pub(crate) fn parse(line: usize, detail: impl Into<String>) -> Self {
        BenchError::Parse {
            line,
            detail: detail.into(),
        }
    }

    pub(crate) fn spec(detail: impl Into<String>) -> Self {
        BenchError::Spec(detail.into())
    }
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;
