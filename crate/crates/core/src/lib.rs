pub mod critics;
pub mod error;
pub mod evalkit;
pub mod generator;
pub mod imageops;
pub mod losses;
pub mod nn;
pub mod pevae;
pub mod posekit;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
