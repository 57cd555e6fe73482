//! Command-line pipeline: synthetic data, patch projection, restoration and
//! evaluation, each runnable alone or chained by `pipeline`.

pub mod app;
pub mod commands;
pub mod config;
pub mod store;
