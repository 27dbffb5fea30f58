//! Candidate pools, calibration-set selection, metric aggregation and loss
//! kernels for contrastive calibration of summarizers.

pub mod analysis;
pub mod clients;
pub mod config;
pub mod corruptions;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod selection;
pub mod text;
