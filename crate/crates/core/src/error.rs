use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("empty object")]
    EmptyObject,
    #[error("zero embedding")]
    ZeroEmbedding,
    #[error("degenerate alignment")]
    DegenerateAlignment,
    #[error("disconnected pose graph: components {0:?}")]
    DisconnectedGraph(Vec<Vec<String>>),
    #[error("pose graph edge references unknown node {0}")]
    UnknownNode(String),
    #[error("node {0} has no keyframes from its origin robot")]
    NoKeyframes(String),
    #[error("empty trajectories")]
    EmptyTrajectories,
    #[error("trajectory length mismatch: estimated {estimated}, ground truth {truth}")]
    TrajectoryMismatch { estimated: usize, truth: usize },
    #[error("unknown cell {0}")]
    UnknownCell(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid scene graph: {0}")]
    InvalidGraph(String),
    #[error("world error: {0}")]
    World(String),
    #[error(transparent)]
    Pddl(#[from] crate::pddl::PddlError),
    #[error(transparent)]
    Grounding(#[from] crate::grounding::GroundingError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
