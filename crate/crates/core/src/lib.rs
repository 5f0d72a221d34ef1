//! Modality completion for multimodal time series with deep belief networks.
//!
//! The crate covers the whole pipeline: RBM/DBN latent models, the
//! attention-gated completion encoder with cross-modal generators, LSTM,
//! Transformer and linear decoders, the cross-modal attention fusion, the
//! composite training objective, baseline imputers, synthetic benchmarks and
//! evaluation metrics. Everything runs on 64-bit floats with seeded,
//! documented random streams so results are bit-reproducible.

pub mod checkpoint;
pub mod completion;
pub mod config;
pub mod data;
pub mod dbn;
pub mod decoders;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod graph;
pub mod numerics;
pub mod params;
pub mod rbm;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Mask, Matrix, Rng};
