use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{flag}: no such file or directory: {}", path.display())]
    MissingPath { flag: &'static str, path: PathBuf },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] matgraph::Error),

    #[error(transparent)]
    Serve(#[from] matgraph_serve::ServeError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for usage errors, 1 for everything that failed validation or I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingPath { .. } | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}
