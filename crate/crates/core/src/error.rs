use thiserror::Error;

/// Every failure the library reports. The variant name doubles as the
/// error class printed by the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("joint {joint} lies behind the camera (z = {z})")]
    BehindCamera { joint: usize, z: f64 },
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("no recorded computation graph: {0}")]
    NoGraph(String),
    #[error("missing condition: {0}")]
    MissingCondition(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("missing base model: {0}")]
    MissingBaseModel(String),
    #[error("insufficient evidence: {0}")]
    InsufficientEvidence(String),
    #[error("rigid initialization diverged: {0}")]
    InitDiverged(String),
    #[error("optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("parse error at {locus}: {message}")]
    ParseError { locus: String, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable class name used in diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidPose(_) => "InvalidPose",
            Error::EmptyInput(_) => "EmptyInput",
            Error::TopologyMismatch(_) => "TopologyMismatch",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::BehindCamera { .. } => "BehindCamera",
            Error::ShapeError(_) => "ShapeError",
            Error::NoGraph(_) => "NoGraph",
            Error::MissingCondition(_) => "MissingCondition",
            Error::Unsupported(_) => "Unsupported",
            Error::MissingBaseModel(_) => "MissingBaseModel",
            Error::InsufficientEvidence(_) => "InsufficientEvidence",
            Error::InitDiverged(_) => "InitDiverged",
            Error::Diverged { .. } => "Diverged",
            Error::ParseError { .. } => "ParseError",
            Error::Io(_) => "Io",
        }
    }

    pub(crate) fn parse(locus: impl Into<String>, message: impl ToString) -> Self {
        Error::ParseError { locus: locus.into(), message: message.to_string() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
