pub mod audio;
pub(crate) mod codec;
pub mod dataset;
pub mod error;
pub mod features;
pub mod federation;
pub mod harness;
pub mod models;
pub mod nn;
pub mod par;
pub mod profiler;
pub mod seed;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
