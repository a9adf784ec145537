//! Personalized adaptive meta-learning for cold-start recommendation.
//!
//! A shared decision network is meta-trained over per-user tasks. Each user
//! adapts it with a learning rate produced from their own embedding, blended
//! with rates stored in a similarity-indexed tree memory.

pub mod error;
pub mod eval;
mod mlp;
pub mod lemma;
pub mod loss;
pub mod memory;
pub mod meta;
pub mod model;
pub mod params;
pub mod tasks;

pub use error::{Error, Result};
pub use model::{Batch, Forward, Model, ModelSpec, OutputKind, Predictions};
pub use params::{axpy_update, Gradient, Layout, ParamSet, Step};
