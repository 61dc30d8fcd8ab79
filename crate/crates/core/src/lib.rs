//! Sparse plus low-rank compression of linear layers by outlier-scaled
//! alternating thresholding.
//!
//! The building blocks are usable on their own:
//!
//! - [`tensor_store`] reads and writes safetensors-compatible archives.
//! - [`linalg`] holds the dense matrix type and truncated SVD.
//! - [`thresholding`] keeps the largest entries layer-wise, row-wise or `n:m`.
//! - [`scaling`] builds the activation scaling diagonal.
//! - [`decompose`] runs the alternating loop on one matrix.
//! - [`pipeline`] compresses a whole model and writes the artifact.
//! - [`kernels`] and [`bench`] apply and time compressed layers.

pub mod bench;
pub mod cli;
pub mod decompose;
pub mod error;
pub mod fixtures;
pub mod kernels;
pub mod linalg;
pub mod pipeline;
pub mod scaling;
pub mod tensor_store;
pub mod thresholding;

pub use error::{OatsError, Result};
