//! Audio tampering detection from electric network frequency (ENF)
//! evidence: ENF extraction, phase and instantaneous-frequency estimation,
//! shallow and deep feature construction, and an attention-fused classifier.

pub mod audio_io;
pub mod corpus;
pub mod dsp;
pub mod enf;
pub mod error;
pub mod features;
pub mod freq;
pub mod model;
pub mod nnet;
pub mod phase;
pub mod pipeline;

pub use error::{Error, Result};
