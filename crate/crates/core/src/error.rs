use std::io;

/// Errors produced across the channel-deduction pipeline.
///
/// Variants are grouped roughly by the stage that raises them. Callers that
/// need to tell configuration mistakes from numeric failures can use
/// [`Error::is_numeric`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid building {id}: {reason}")]
    InvalidBuilding { id: u32, reason: String },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("could not place {requested} buildings without overlap (placed {placed})")]
    Overcrowded { requested: usize, placed: usize },
    #[error("perturbation moves building {0} onto the base station")]
    BuildingOnBaseStation(u32),

    #[error("invalid trace endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("reflection order {0} exceeds the supported maximum of 3")]
    OrderTooHigh(usize),

    #[error("invalid system configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("index {index} out of range for dimension of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("reference channel has zero power; NMSE is undefined")]
    ZeroPowerReference,
    #[error("partial channel has zero power (outage sample)")]
    OutageSample,

    #[error("feature set was built from a different scene")]
    SceneHashMismatch,

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("bad file format: {0}")]
    Format(String),
    #[error("unsupported {kind} version {found} (expected {expected})")]
    Version {
        kind: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("scene parse error: {0}")]
    SceneParse(#[from] toml::de::Error),
    #[error("serialization error: {0}")]
    Serialize(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for failures caused by numerical pathologies rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. } | Error::ZeroPowerReference)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
