use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not a rotation matrix: {0}")]
    InvalidRotation(String),

    #[error("degenerate matrix: {0}")]
    Degenerate(String),

    #[error("invalid angle range [{lo}, {hi}] (radians); expected 0 < lo <= hi <= pi")]
    InvalidAngleRange { lo: f64, hi: f64 },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error(
        "graph is disconnected ({components} components); \
         restrict it with largest_connected_component first"
    )]
    Disconnected { components: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("cheirality violation: point has depth {depth} in camera {camera}")]
    Cheirality { camera: usize, depth: f64 },

    #[error("length mismatch: {0} estimates vs {1} references")]
    LengthMismatch(usize, usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
