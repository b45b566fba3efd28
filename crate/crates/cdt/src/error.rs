use std::path::{Path, PathBuf};

/// Errors of the file formats and command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cdt_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    /// Malformed line in a JSON-lines file.
    #[error("{path}:{line}: {detail}")]
    Parse { path: PathBuf, line: usize, detail: String },
    /// Well-formed record that violates the format's schema.
    #[error("{path}:{line}: {detail}")]
    Schema { path: PathBuf, line: usize, detail: String },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => match e {
                cdt_core::Error::Config(_) => "config",
                cdt_core::Error::Dimension { .. } => "dimension",
                cdt_core::Error::Input(_) => "input",
                cdt_core::Error::Usage(_) => "usage",
                cdt_core::Error::Numeric(_) => "numeric",
                cdt_core::Error::Assembly(_) => "assembly",
                cdt_core::Error::State(_) => "state",
            },
            CliError::Io { .. } => "io",
            CliError::Parse { .. } => "parse",
            CliError::Schema { .. } => "schema",
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
        }
    }

    /// Process exit code; 0 is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "usage" => 2,
            "config" => 3,
            "io" => 4,
            "parse" | "schema" | "input" => 5,
            "numeric" => 6,
            "state" => 7,
            _ => 8,
        }
    }

    /// `error[<kind>]: <message>` on a single line.
    pub fn one_line(&self) -> String {
        let msg = match self {
            CliError::Core(e) => strip_prefix(e),
            other => other.to_string(),
        };
        let msg: String = msg.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error[{}]: {msg}", self.kind())
    }
}

fn strip_prefix(e: &cdt_core::Error) -> String {
    match e {
        cdt_core::Error::Config(m)
        | cdt_core::Error::Input(m)
        | cdt_core::Error::Usage(m)
        | cdt_core::Error::Numeric(m)
        | cdt_core::Error::Assembly(m)
        | cdt_core::Error::State(m) => m.clone(),
        cdt_core::Error::Dimension { layer, detail } => format!("{layer}: {detail}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_is_single_line() {
        let e = CliError::Config("bad\nvalue".into());
        assert_eq!(e.one_line(), "error[config]: bad value");
        assert_eq!(e.exit_code(), 3);
        let e = CliError::from(cdt_core::Error::State("weights not loaded".into()));
        assert_eq!(e.one_line(), "error[state]: weights not loaded");
        assert_eq!(e.exit_code(), 7);
    }
}
