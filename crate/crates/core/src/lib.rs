//! Simulator and analysis library for privacy-preserving over-the-air
//! multi-view inference.

pub mod analysis;
pub mod channel;
pub mod config;
pub mod device;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod privacy;
pub mod report;
pub mod seed;
pub mod server;
pub mod simulation;
pub mod stats;

pub use config::{DeviceProfile, SystemConfig};
pub use error::{Error, Result};
