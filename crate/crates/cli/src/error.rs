use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{artifact} was produced under a different config (hash {found}, current {expected}); rerun {rerun}")]
    ConfigMismatch {
        artifact: String,
        expected: String,
        found: String,
        rerun: String,
    },
    #[error(transparent)]
    Core(#[from] ccnf::Error),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        use ccnf::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::ConfigMismatch { .. } => 6,
            CliError::Core(e) => match e {
                E::Input(_)
                | E::Shape(_)
                | E::Parse { .. }
                | E::Format(_)
                | E::DegenerateData(_)
                | E::Dimensionality { .. } => 3,
                E::Divergence { .. } => 4,
                E::Io { .. } => 5,
                E::HashMismatch { .. } => 6,
                _ => 1,
            },
        }
    }
}
