use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report.
///
/// Variant names double as the error taxonomy surfaced by the CLI and any
/// bindings, so they are stable identifiers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid sensor model: {0}")]
    InvalidSensorModel(String),
    #[error("insufficient points: need at least {needed}, found {found}")]
    InsufficientPoints { needed: usize, found: usize },
    #[error("no plane hypothesis within the tilt bound after {iterations} iterations")]
    NoPlaneFound { iterations: usize },
    #[error("scan {0} has no labels")]
    MissingLabels(usize),
    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),
    #[error("insufficient samples: need at least {needed}, found {found}")]
    InsufficientSamples { needed: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("every source/target pair is masked out")]
    EmptyAdmissibleSet,
    #[error("invalid marginals: {0}")]
    InvalidMarginals(String),
    #[error("invalid cost: {0}")]
    InvalidCost(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("unmapped label ids: {0:?}")]
    UnmappedLabel(Vec<u16>),
    #[error("corrupt file: {0}")]
    CorruptFile(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("scale {scale_id}: {source}")]
    Scale {
        scale_id: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

impl Error {
    /// Stable name of the innermost error variant.
    pub fn name(&self) -> &'static str {
        match self {
            Error::EmptyInput(_) => "EmptyInput",
            Error::InvalidSensorModel(_) => "InvalidSensorModel",
            Error::InsufficientPoints { .. } => "InsufficientPoints",
            Error::NoPlaneFound { .. } => "NoPlaneFound",
            Error::MissingLabels(_) => "MissingLabels",
            Error::DegenerateInstance(_) => "DegenerateInstance",
            Error::InsufficientSamples { .. } => "InsufficientSamples",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::EmptyAdmissibleSet => "EmptyAdmissibleSet",
            Error::InvalidMarginals(_) => "InvalidMarginals",
            Error::InvalidCost(_) => "InvalidCost",
            Error::InvalidShape(_) => "InvalidShape",
            Error::UnmappedLabel(_) => "UnmappedLabel",
            Error::CorruptFile(_) => "CorruptFile",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Scale { source, .. } | Error::Stage { source, .. } => source.name(),
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidSensorModel(_)
            | Error::InvalidSpec(_)
            | Error::InvalidConfig(_)
            | Error::Json(_) => ErrorKind::Config,
            Error::NoPlaneFound { .. } => ErrorKind::Numerical,
            Error::Scale { source, .. } | Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn in_scale(self, scale_id: usize) -> Error {
        Error::Scale {
            scale_id,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
