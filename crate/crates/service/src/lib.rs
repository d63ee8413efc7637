//! HTTP service and command line around the `mgrl` retrieval library.
//!
//! A session accumulates strokes; after each one the whole sketch is
//! re-rasterized, re-embedded and ranked against a fixed gallery index.

pub mod api;
pub mod cli;
pub mod engine;

pub use api::{router, AppState};
pub use engine::{Engine, EngineError, ServiceConfig};
