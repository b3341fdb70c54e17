//! Pairwise spatial-transformer ranking networks.
//!
//! A pair of images is scored by two weight-shared branches; each branch
//! localizes regions of interest with spatial transformers, extracts
//! features from the image and its regions, and maps the concatenated
//! features to a scalar. Training minimizes a RankNet cross-entropy on the
//! score difference, gated by an out-of-bounds penalty on the predicted
//! regions. All gradients are derived by hand.

pub mod data;
mod error;
pub mod numcore;
pub mod ranker;
pub mod stn;
pub mod train;

pub use error::{Error, Result};
