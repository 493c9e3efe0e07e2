//! Incremental saliency explanations for black-box object detectors on
//! video.
//!
//! A saliency field is computed once per track with mask-weighted
//! sampling, then carried from frame to frame by warping it with the
//! scale/translation between the track's boxes. Each frame gets a
//! sufficient explanation: the smallest saliency threshold whose revealed
//! pixels still reproduce the detection.

pub mod detector;
pub mod drise;
pub mod error;
pub mod explain;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod saliency;
pub mod scene;
pub mod tracker;

pub use error::{Error, ErrorKind, Result};
