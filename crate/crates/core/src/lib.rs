pub mod datasets;
pub mod cli;
pub mod error;
pub mod losses;
pub mod model;
pub mod nn;
pub mod oracles;
pub mod report;
pub mod training;
mod seeds;
pub mod transforms;

pub use error::{Error, Result};
