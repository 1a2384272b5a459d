use std::fmt;
use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which kind of entity the sparse-data filter removed last.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntityClass {
    User,
    Poi,
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityClass::User => f.write_str("user"),
            EntityClass::Poi => f.write_str("poi"),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read check-ins: {0}")]
    Io(#[from] io::Error),
    #[error("{malformed} of {total} lines malformed (first at line {first_line})")]
    Format {
        first_line: usize,
        malformed: usize,
        total: usize,
    },
    #[error("filtering removed every check-in (last removed: {last_removed})")]
    EmptyDataset { last_removed: EntityClass },
    #[error("filter threshold must be at least 1")]
    InvalidThreshold,
    #[error("training set is empty")]
    EmptyTrain,
    #[error(
        "balancing cap floor((1+theta)*N_ave) = {cap} is below the replication target ceil(N_ave) = {target}; use a larger theta_t"
    )]
    BalanceConfig { cap: usize, target: usize },
    #[error("theta_t must be a finite non-negative number, got {0}")]
    InvalidTheta(f64),
}

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("coordinate out of range: lat={lat}, lon={lon}")]
    CoordinateOutOfRange { lat: f64, lon: f64 },
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding index {index} outside table of {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
}

#[derive(Debug, Error)]
pub enum HypergraphError {
    #[error("trajectory {0} has no points")]
    EmptyTrajectory(usize),
    #[error("trajectory {traj} references unknown POI {poi:?}")]
    UnknownPoi { traj: usize, poi: String },
    #[error("POI index {poi} out of range for {pois} vertices (trajectory {traj})")]
    PoiIndexOutOfRange {
        traj: usize,
        poi: usize,
        pois: usize,
    },
    #[error("zero {0} degree at index {1}")]
    ZeroDegree(&'static str, usize),
    #[error("POI {0} has an empty trajectory neighborhood")]
    EmptyNeighborhood(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("non-finite LSTM state at batch index {batch}, timestep {step}")]
    NonFiniteLstm { batch: usize, step: usize },
    #[error("invalid variant combination: {0}")]
    InvalidVariant(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cold-start grouping needs at least 4 users, found {0}")]
    Grouping(usize),
    #[error("k = {k} outside [1, {classes}]")]
    InvalidK { k: usize, classes: usize },
    #[error("prediction matrix: {0}")]
    Predictions(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid value for {key}: {msg}")]
    Invalid { key: String, msg: String },
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("incompatible artifact version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint does not match preprocessed data: {0}")]
    Mismatch(String),
}

impl ArtifactError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        ArtifactError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Hypergraph(#[from] HypergraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}
