use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] kac_ising::Error),

    #[error("configuration: {0}")]
    Config(String),

    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    /// Process exit code: 2 for rejected input, 3 for solver failures and
    /// 1 for failures to read or write files.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) => 3,
            CliError::Config(_) => 2,
            CliError::Io { .. } => 1,
        }
    }

    pub fn status(&self) -> &'static str {
        match self.exit_code() {
            2 => "rejected",
            _ => "failed",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let rejected = CliError::from(kac_ising::Coupling::new(-1.0).unwrap_err());
        assert_eq!((rejected.exit_code(), rejected.status()), (2, "rejected"));
        let solver = CliError::Core(kac_ising::Error::Convergence("no".into()));
        assert_eq!((solver.exit_code(), solver.status()), (3, "failed"));
        assert_eq!(CliError::config("x").exit_code(), 2);
    }
}
