//! Acoustic-to-word sequence-to-sequence laboratory.
//!
//! A pyramidal BLSTM encoder with a location-aware attention decoder is
//! trained on synthetic word-sequence features. The analysis modules turn
//! attention peaks into word boundaries, score them against ground-truth
//! alignments, and extract per-word encoder vectors for nearest-neighbour
//! search and 2-D projection.

pub mod analysis;
mod binio;
pub mod corpus;
pub mod decoding;
pub mod embeddings;
pub mod error;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
