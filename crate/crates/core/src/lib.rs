//! Sleep staging from photoplethysmography: record ingestion, signal
//! conditioning, a small differentiable network engine, the staging models,
//! training protocols and evaluation statistics.

pub mod dsp;
pub mod metrics;
pub mod models;
pub mod neural;
pub mod protocol;
pub mod records;
pub mod staging;
