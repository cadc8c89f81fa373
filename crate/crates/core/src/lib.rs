//! Spuriousness-aware episodic training for classifiers over fixed feature
//! vectors, with caption-derived attributes, synthetic benchmarks and reports.

pub mod cli;
pub mod corpus;
pub mod data;
pub mod episodes;
pub mod error;
pub mod groups;
pub mod model;
pub mod plot;
pub mod report;
pub mod synthbench;
pub mod train;

pub use error::{Error, Result};
