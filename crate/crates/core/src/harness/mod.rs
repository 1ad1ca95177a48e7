//! Datasets, splits, model selection, persistence and experiment runs.

pub mod archive;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod grid;
pub mod io;
pub mod model;
pub mod splits;
