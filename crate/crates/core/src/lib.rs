pub mod augment;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod gripper;
pub mod image;
pub mod pipeline;
pub mod policy;
pub mod sfm;
pub mod sim;
pub mod study;
pub mod viz;

pub use error::{Error, Result};
