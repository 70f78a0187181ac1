//! Hyperparameter optimization for multi-layer graph convolutional networks.
//!
//! The engine trains self-tuning GCNs whose layer weights respond to their
//! hyperparameters through a learned affine hypernet, alternating model
//! updates on the training split with hyperparameter updates on the
//! validation split. A population scheduler layers exploit/explore on top,
//! and random search, Hyperband and plain PBT serve as baselines.

pub mod config;
pub mod error;
pub mod graph;
pub mod hyper;
pub mod linalg;
pub mod nn;
pub mod pbt;
pub mod rng;
pub mod runner;
pub mod search;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
