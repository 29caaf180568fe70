use thiserror::Error;

/// Errors produced by world construction, simulation, and experiment plumbing.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("world spec is empty")]
    EmptyWorldSpec,

    #[error("world is not connected: {reachable} of {total} cells reachable from cell 0")]
    DisconnectedWorld { reachable: usize, total: usize },

    #[error("unknown grid id {0}")]
    UnknownGrid(usize),

    #[error("unknown district id {0}")]
    UnknownDistrict(usize),

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid decision at grid {grid}: {msg}")]
    InvalidDecision { grid: usize, msg: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty history")]
    EmptyHistory,

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
