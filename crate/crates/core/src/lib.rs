//! Distributed recurrent autoencoder for scalable image compression.
//!
//! `M` lightweight encoders, each seeing only its own data source, share one
//! decoder. Each encoder runs a fixed number of residual iterations and emits
//! one block of binary codes per iteration, so any prefix of the blocks decodes
//! to a coarser reconstruction.

pub mod autodiff;
pub mod bitstream;
pub mod codec;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod training;

pub use error::{Error, Result};
