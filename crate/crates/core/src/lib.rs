//! Unsupervised graph domain adaptation by sequential structure and
//! attribute transformation.
//!
//! The pipeline: diffuse both graphs with a personalized-PageRank kernel,
//! encode them with one shared graph-convolution stack, push the encodings
//! away from self-supervised private anchors, align their Gaussian summaries
//! under a Wasserstein-type distance, and fit a classifier on the source
//! labels with an entropy term on the target.

pub mod autodiff;
pub mod checkpoint;
pub mod diffusion;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod graph;
pub mod linalg;
pub mod objectives;
pub mod optim;
pub mod par;
pub mod sparse;
pub mod training;

pub use error::{Error, Result};
