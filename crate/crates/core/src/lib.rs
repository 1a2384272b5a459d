//! Trajectory-user linking with a hypergraph attention network and an LSTM
//! sequence encoder.
//!
//! The crate covers the whole pipeline: check-in ingestion and trajectory
//! preparation ([`data`]), point encoding ([`encoding`]), the trajectory
//! hypergraph ([`hypergraph`]), the two representation branches
//! ([`relational`], [`sequence`]), training ([`train`]), evaluation
//! ([`eval`]) and a seeded synthetic corpus generator ([`synth`]).

// Index loops mirror the matrix formulas they implement.
#![allow(
    clippy::needless_range_loop,
    clippy::too_many_arguments,
    clippy::type_complexity
)]

pub mod checkpoint;
pub mod data;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod hypergraph;
pub mod model;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod relational;
pub mod sequence;
pub mod synth;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use eval::{EvalReport, PredictionMatrix};
pub use model::{Ablation, VariantId};
pub use params::{ModelDims, ModelParams};
pub use pipeline::{Corpus, PrepConfig, Prepared};
pub use tensor::Mat;
pub use train::{TrainConfig, TrainOutcome};
