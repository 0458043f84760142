//! Masked connection-based dynamic graph learning for connectome classification.
//!
//! The pipeline turns per-subject BOLD time series into a binary prediction:
//!
//! 1. [`connectivity`]: static and sliding-window Pearson correlation networks.
//! 2. [`wea`]: weighted edge aggregation, stacked cross-convolution layers over
//!    the dynamic stack, fused with the static network into a task-specific
//!    connectivity matrix (tsFC).
//! 3. [`med`]: masked edge drop, a binary mask derived from tsFC that prunes
//!    the static network by Hadamard product.
//! 4. [`hgcn`]: graph construction from tsFC, residual GCN blocks, max readout,
//!    and self-attention producing a graph embedding and an edge-attention vector.
//! 5. [`ace`]: attention-based connection encoder, fusion head, and the
//!    composite classification + alignment loss.
//! 6. [`trainer`]: Adam optimization, stratified k-fold cross-validation, and
//!    the accuracy / precision / F1 / AUROC metrics.
//! 7. [`analysis`]: per-edge two-sample t-tests and overlap statistics between
//!    static and task-specific connectivity.
//!
//! Everything trainable runs on the reverse-mode engine in [`gradcore`]; every
//! primitive gradient is checkable against central finite differences.
//! [`dataio`] supplies manifest/config parsing and a seeded synthetic
//! connectome generator for desk-scale experiments.

pub mod ace;
pub mod analysis;
pub mod connectivity;
pub mod dataio;
pub mod error;
pub mod gradcore;
pub mod hgcn;
pub mod med;
pub mod model;
pub mod trainer;
pub mod wea;

pub use error::Error;
