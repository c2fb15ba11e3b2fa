pub mod analysis;
pub mod base;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod mem;
pub mod nn;
pub mod numeric;
pub mod seeds;

pub use error::TrainError;
