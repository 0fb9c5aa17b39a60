//! Unsupervised change detection for co-registered bi-temporal rasters.
//!
//! Two generators learn the radiometric style mapping between the acquisition
//! dates under a cycle constraint; a segmentation network then learns a mask
//! that hides whatever the generator cannot reconstruct, regularized towards
//! sparsity and towards equivariance under flips and transposition.

pub mod change_segmentation;
pub mod cycle_consistency;
pub mod dataio;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod preprocess;
pub mod semantic_consistency;
pub mod trainer;

pub use error::{CcdfError, Result};
