//! File formats, statistics, experiment orchestration and reporting around
//! `cda-core`.

pub mod config;
pub mod harness;
pub mod log_io;
pub mod report;
pub mod stats;
