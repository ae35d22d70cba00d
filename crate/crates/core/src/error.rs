use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("a path needs at least 2 waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("waypoint {index} has {found} joints, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("degenerate path: {0}")]
    DegeneratePath(&'static str),
    #[error("limits must be strictly positive and finite ({0})")]
    InvalidLimits(String),
    #[error("every stoppable set is empty")]
    EmptyFamily,
    #[error("artifact: {0}")]
    Artifact(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
