use std::path::Path;

use serde::Serialize;
use thiserror::Error;

/// Everything a command can fail with. Each variant maps to a stable code
/// and an exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] permalign::Error),
}

/// The machine-readable record printed on failure.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub code: &'static str,
    pub exit_code: i32,
    pub message: String,
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Stable identifier, listed in the README.
    pub fn code(&self) -> &'static str {
        use permalign::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::ConfigParse(_) => "config_parse",
            CliError::ConfigInvalid(_) => "config_invalid",
            CliError::Io { .. } => "io",
            CliError::Core(e) => match e {
                E::TrainingDiverged { .. } => "training_diverged",
                E::SearchDiverged { .. } => "search_diverged",
                E::NonFinite(_) => "non_finite",
                E::ImaginaryResidue(_) => "imaginary_residue",
                E::SvdNoConvergence { .. } => "svd_no_convergence",
                E::Dimension(_) => "shape_mismatch",
                E::InvalidArgument(_) => "invalid_argument",
                E::EmptyData(_) => "empty_data",
                E::DegeneratePlane(_) => "degenerate_plane",
                E::Format(_) | E::Shape { .. } => "format",
                E::Dataset(_) => "dataset",
                E::Io(_) => "io",
                E::Json(_) => "format",
            },
        }
    }

    /// 2 for bad configuration or input, 3 for numeric divergence, 4 for IO.
    pub fn exit_code(&self) -> i32 {
        use permalign::Error as E;
        match self {
            CliError::Usage(_) | CliError::ConfigParse(_) | CliError::ConfigInvalid(_) => 2,
            CliError::Io { .. } => 4,
            CliError::Core(e) if e.is_divergence() || matches!(e, E::SvdNoConvergence { .. }) => 3,
            CliError::Core(e) if e.is_io() || matches!(e, E::Json(_)) => 4,
            CliError::Core(_) => 2,
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            code: self.code(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use permalign::Error as E;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::ConfigParse("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(E::InvalidArgument("x".into())).exit_code(), 2);
        assert_eq!(CliError::Core(E::TrainingDiverged { epoch: 1, loss: f64::NAN }).exit_code(), 3);
        assert_eq!(CliError::Core(E::SvdNoConvergence { rows: 1, cols: 1, sweeps: 1 }).exit_code(), 3);
        assert_eq!(CliError::Core(E::Format("x".into())).exit_code(), 4);
        assert_eq!(CliError::Core(E::Dataset("x".into())).exit_code(), 4);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(CliError::io(Path::new("a"), io).exit_code(), 4);
    }

    #[test]
    fn record_serializes() {
        let r = CliError::ConfigInvalid("seeds".into()).record();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["code"], "config_invalid");
        assert_eq!(v["exit_code"], 2);
    }
}
