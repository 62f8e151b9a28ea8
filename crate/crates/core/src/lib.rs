//! Multi-relation graph anomaly detection: per-relation GCN encoders,
//! attention over the merged graph, a neighborhood aggregator and an MLP
//! discriminator, trained with a small built-in reverse-mode autodiff.

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod graph;
pub mod layers;
pub mod model;
pub mod synth;

pub use error::{Error, Result};
