//! Batch experiment runner: simulate a bus, train the classifier, run the
//! detectors and summarize the results, all inside one run directory.

pub mod config;
pub mod run;

pub use config::ExperimentConfig;
