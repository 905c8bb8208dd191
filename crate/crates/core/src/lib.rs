pub mod bench;
pub mod camera;
pub mod config;
pub mod dem;
pub mod error;
pub mod detect;
pub mod flight;
pub mod fusion;
pub mod integral;
pub mod io;
pub mod metrics;
pub mod occlusion;
pub mod pipeline;
pub mod sampling;
pub mod scene;
pub mod stages;

pub use error::{Error, Result};
