//! Photovoltaic power forecasting from numerical weather predictions.
//!
//! Base regressors ([`knn`], [`qrf`], [`svr`], [`nn`]) are combined by a
//! least-squares stack ([`ensemble`]) and scored with capacity-normalised
//! MAE ([`metrics`]). [`pipeline`] wires them into the train / evaluate flow
//! used by the `pvcast` command-line tool.

pub mod artifact;
pub mod config;
pub mod dataset;
pub mod ensemble;
pub mod ingest;
pub mod knn;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod pipeline;
pub mod preprocess;
pub mod qrf;
pub mod suite;
pub mod svr;
pub mod synthetic;

pub use dataset::Dataset;
pub use matrix::Matrix;
