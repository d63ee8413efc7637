//! Multi-granularity sketch-to-photo face retrieval.
//!
//! Partial sketches and gallery photos are embedded region by region at
//! three grid granularities (1x1, 2x2, 3x3) by one shared network. Sketch
//! cells with too little ink are dropped, and photos are ranked by a
//! weighted sum of per-level mean region distances. The crate covers the
//! numerics engine, the model, synthetic and on-disk episode data,
//! triplet training, a persisted exact-search index and early-retrieval
//! metrics. Everything numeric is generic over `f32`/`f64`.

mod codec;
pub mod episodes;
pub mod granularity;
pub mod index;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod raster;
pub mod scalar;
pub mod training;

use thiserror::Error;

pub use codec::fnv1a;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type Graph32 = numerics::Graph<f32>;
pub type Graph64 = numerics::Graph<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type Embedding32 = granularity::MGEmbedding<f32>;
pub type Embedding64 = granularity::MGEmbedding<f64>;
pub type Checkpoint32 = training::Checkpoint<f32>;
pub type Checkpoint64 = training::Checkpoint<f64>;
pub type Embedder32 = index::Embedder<f32>;
pub type Embedder64 = index::Embedder<f64>;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Granularity(#[from] granularity::GranularityError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Episode(#[from] episodes::EpisodeError),
    #[error(transparent)]
    Train(#[from] training::TrainError),
    #[error(transparent)]
    Checkpoint(#[from] training::CheckpointError),
    #[error(transparent)]
    Index(#[from] index::IndexError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}
