use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed input, schema problems and invalid parameters.
    #[error("{0}")]
    Input(String),
    #[error("no common context: {0}")]
    NoCommonContext(String),
    #[error("numeric failure in group {group}: {reason}")]
    Numeric { group: String, reason: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 1,
            CliError::NoCommonContext(_) => 2,
            CliError::Numeric { .. } => 3,
        }
    }

    /// Maps a core error raised while fitting `group`.
    pub fn in_group(group: &str, e: linkmerge::Error) -> Self {
        use linkmerge::Error as E;
        match e {
            E::Numeric(_) | E::Quadrature(_) | E::InvalidCdf(_) | E::CollinearContext => {
                CliError::Numeric {
                    group: group.to_string(),
                    reason: e.to_string(),
                }
            }
            other => CliError::Input(format!("group {group}: {other}")),
        }
    }
}

impl From<linkmerge::Error> for CliError {
    fn from(e: linkmerge::Error) -> Self {
        CliError::in_group("*", e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
