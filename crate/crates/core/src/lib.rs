//! Self-supervised graph representation learning with learnable feature and
//! topology augmentations.

pub mod augment;
pub mod cli;
pub mod autodiff;
pub mod encoder;
pub mod eval;
pub mod error;
pub mod graph;
pub mod objective;
pub mod sparse;
pub mod trainer;

pub use error::{Error, Result};
