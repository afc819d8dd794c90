//! Sparse feedforward network structure learning.
//!
//! The pipeline learns a Chow-Liu tree over the (binarized) input features,
//! covers the tree with receptive fields to obtain a connectivity mask, trains
//! the masked layer as a denoising autoencoder, projects the data through it
//! and repeats on the hidden units. The stacked layers are then fine-tuned as a
//! classifier.
//!
//! Module map:
//!
//! - [`data`]: dataset loading, discretization, splitting.
//! - [`stats`]: contingency counts and empirical mutual information.
//! - [`tree`]: maximum-weight spanning trees, hop distances, tree likelihood.
//! - [`receptive_field`]: field centers, balls and connectivity masks.
//! - [`nn`]: masked/dense layers, losses, Adam, dropout.
//! - [`dae`]: denoising autoencoder training and projection.
//! - [`builder`]: layer-wise construction, fine-tuning, evaluation, model files.
//! - [`baselines`]: dense, magnitude-pruned and L1-regularized networks.
//! - [`interpret`]: correlation-based unit characterization and embedding scores.
//! - [`synth`]: seeded synthetic fixtures.
//! - [`cli`]: the `trfnet` command-line front end.

pub mod baselines;
pub mod builder;
pub mod cli;
pub mod dae;
pub mod data;
mod error;
pub mod interpret;
pub mod nn;
pub mod receptive_field;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod tree;

pub use builder::{BuildConfig, EvalReport, FinetuneHyper, TrfNetwork};
pub use error::{Error, Result};


pub use data::{BinaryDataset, Dataset, DiscretizationPolicy};
pub use receptive_field::{ConnectivityMask, ReceptiveFieldPlan};
pub use stats::{ContingencyCounts, MiMatrix};
pub use tree::ChowLiuTree;
