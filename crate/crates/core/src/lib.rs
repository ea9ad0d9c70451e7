pub mod codec;
pub mod config;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod landmark_ae;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod registry;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
