//! Command-line harness around `mvgc-core`: track ingestion, consistency
//! diagnostics, experiments and report files.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod features;
pub mod report;
pub mod tracks;

pub use mvgc_core;
