//! Pairwise distance-matrix CNNs for detecting pathological speech.
//!
//! Test and reference utterances are resized to a fixed length, passed
//! through a shared front-end, compared frame by frame into a distance
//! image, and classified by a small CNN. Speaker decisions come from soft
//! voting over many phonetically matched reference pairs. The crate also
//! provides the two baselines, a reverse-mode autodiff core sized for
//! these networks, and the cross-validation protocol used to evaluate them.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod training;

pub use error::{Error, Result};
