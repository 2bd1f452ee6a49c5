mod binfmt;
pub mod camera;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gps;
mod kdtree;
pub mod lidar;
pub mod metrics;
pub mod models;
pub mod radar;
pub mod report;
pub mod sim;
pub mod train;
pub mod workflow;

pub use error::{Error, Result};
