//! Sparse hyperbolic graph convolutions for link prediction on text-rich
//! heterogeneous graphs.

pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod explain;
pub mod geometry;
pub mod grad;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod sparse;
pub mod textsig;

pub use error::{Error, Result};
