//! Recurrent dialogue models: an Encoder-Decoder and a hierarchical
//! recurrent encoder-decoder (HRED) built on a from-scratch LSTM, with
//! training, checkpointing, corpus preparation and context-space analysis
//! (t-SNE maps, topic centroids, trajectories, probe experiments and the
//! Wilcoxon signed-rank test).
//!
//! The numerical core is generic over [`Scalar`]; the aliases at the crate
//! root fix it to `f64`, which is what training and checkpoints use.

pub mod analysis;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod models;
pub mod numerics;
pub mod recurrent;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision model, the type used by training, checkpoints and serving.
pub type Model = models::DialogueModel<f64>;
pub type Params = models::ModelParams<f64>;
pub type Embeddings = embeddings::EmbeddingMatrix<f64>;
pub type Checkpoint = models::LoadedCheckpoint<f64>;
