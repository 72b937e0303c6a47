//! Command-line front end for `bigmvp`: data ingestion, layered
//! configuration, parallel orchestration, result files and the acceptance
//! suite behind `bigmvp verify`.

pub mod args;
pub mod config;
pub mod io;
pub mod report;
pub mod run;
pub mod verify;
