//! Video person re-identification with attribute-aware identity-hard
//! triplet loss and attribute-driven spatio-temporal attention.

pub mod data;
pub mod distance;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod sampler;

pub use error::{Error, Result};
