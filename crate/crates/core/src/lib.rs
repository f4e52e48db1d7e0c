//! Deterministic peg-in-hole insertion benchmark with synthetic
//! visuotactile observations, a tokenized action policy, supervised and
//! preference training, and evaluation metrics.

pub mod dataset;
pub mod episode;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod policy;
pub mod preference;
pub mod randomization;
pub mod raster;
pub mod rng;
pub mod sensors;

pub use error::{Error, Result};
