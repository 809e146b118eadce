//! Attack-specialized network intrusion detection on NSL-KDD.
//!
//! Four binary detectors (DoS, Probe, R2L, U2R), each with its own
//! architecture, oversampling strategy, and loss, are fused by a Random
//! Forest meta-classifier into a single anomaly decision.

pub mod artifact;
pub mod classical;
pub mod config;
pub mod dataset;
pub mod detectors;
pub mod error;
pub mod evaluation;
pub mod meta;
pub mod neural;
pub mod pipeline;
pub mod preprocess;
pub mod resample;

pub use error::{Error, Result};
