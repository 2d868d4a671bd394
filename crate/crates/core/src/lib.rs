//! Laboratory for false data injection attack (FDIA) detection on power
//! measurement streams.
//!
//! The passive path filters measurements with an adaptive Kalman filter
//! ([`akf`]) and thresholds the deviations ([`passive`]). The active path
//! classifies measurement windows with a GRU-CNN network ([`nn`]) trained on
//! balanced, standardized data ([`pipeline`]). [`fusion`] ORs both verdicts.

pub mod akf;
pub mod attack;
pub mod dc;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod nn;
pub mod numerics;
pub mod passive;
pub mod pipeline;
pub mod signal;

pub use error::{Error, ErrorKind, Result};
