use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid grasp: {0}")]
    InvalidGrasp(String),

    #[error("invalid primitive dimensions: {0}")]
    InvalidDims(String),

    #[error("placed {placed} objects, at least {required} required")]
    PlacementExhausted { placed: usize, required: usize },

    #[error("no camera ray hit any geometry")]
    EmptyView,

    #[error("no positive points")]
    EmptyPositives,

    #[error("width {width} outside [0, {max_width}]")]
    WidthOutOfRange { width: f64, max_width: f64 },

    #[error("point cloud has {got} points, network needs at least {need}")]
    TooFewPoints { got: usize, need: usize },

    #[error("loss became non-finite at step {step}")]
    DivergenceDetected { step: usize },

    #[error("segment {0} has no points")]
    EmptySegment(i32),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
