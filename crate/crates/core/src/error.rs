use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("svd of {rows}x{cols} matrix did not converge after {sweeps} sweeps")]
    SvdNoConvergence {
        rows: usize,
        cols: usize,
        sweeps: usize,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("permutation search diverged at iteration {iteration}: objective is {value}")]
    SearchDiverged { iteration: usize, value: f64 },

    #[error("complex result has imaginary residue {0}")]
    ImaginaryResidue(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("degenerate plane: {0}")]
    DegeneratePlane(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint shape error at layer {layer}: {message}")]
    Shape { layer: usize, message: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by a numerical blow-up rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::TrainingDiverged { .. }
                | Error::SearchDiverged { .. }
                | Error::NonFinite(_)
                | Error::ImaginaryResidue(_)
        )
    }

    /// True for errors raised while reading or writing files.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::Format(_) | Error::Shape { .. } | Error::Dataset(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
