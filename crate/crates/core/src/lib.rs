//! Multimodal named entity recognition on precomputed text and vision
//! features: hierarchical encoders, per-view image-text relevance, synchronous
//! cross-modal interaction and CRF decoding, on a small f64 autodiff core.

pub mod checkpoint;
pub mod config;
pub mod crf;
pub mod cross_modal;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod relevance;
pub mod spatial;
pub mod tensor;
pub mod text;
pub mod train;
pub mod vision;

pub use error::{Error, Result};
