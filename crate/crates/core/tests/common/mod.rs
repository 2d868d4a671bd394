//! Helpers shared by the integration tests of this crate and the workspace
//! acceptance suite.
#![allow(dead_code)]

pub mod gradcheck;
pub mod oracle;
pub mod scenarios;
pub mod stress;
