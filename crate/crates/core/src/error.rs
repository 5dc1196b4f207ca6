use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: schema error: {msg}")]
    Schema { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),

    #[error("brute force search over {combinations} subsets exceeds the guard of {limit}")]
    SearchTooLarge { combinations: u128, limit: u128 },

    #[error("crop counts sum to zero")]
    EmptyCounts,

    #[error(
        "rounding target {target} unreachable from fractional sum {floor_sum} with {len} cells"
    )]
    Rounding {
        target: u64,
        floor_sum: u64,
        len: usize,
    },

    #[error("overlap filter input mixes frames or cameras")]
    MixedFrame,

    #[error("no non-noise points")]
    NoClusteredPoints,

    #[error("schedule violates the time constraint")]
    ScheduleFailed,

    #[error("empty input")]
    Empty,

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("a pipeline stage stopped before its input was consumed")]
    Disconnected,

    #[error("external trainer: {0}")]
    Trainer(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
