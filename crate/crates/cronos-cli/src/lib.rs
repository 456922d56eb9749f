//! Command-line front end for the cronos solver: configuration resolution,
//! dataset handling, and the train/eval/gen-data pipelines.

pub mod config;
pub mod data;
pub mod run;
