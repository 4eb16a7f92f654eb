//! Federated learning across heterogeneous convolutional backbones that
//! share only the bottleneck of a parallel additive U-Net.
//!
//! The crate is layered bottom-up:
//!
//! - [`autodiff`]: tensors, a reverse-mode tape and optimizers
//! - [`models`]: backbones, the U-Net and the fused composite model
//! - [`data`]: synthetic and raw-binary datasets, non-IID partitioning, batching
//! - [`federation`]: client updates, aggregation, the communication meter, rounds
//! - [`runner`]: configuration, presets, metrics files and summaries

pub mod autodiff;
pub mod data;
mod error;
pub mod federation;
pub mod models;
pub mod runner;
pub mod seed;

pub use error::{Error, Result};
