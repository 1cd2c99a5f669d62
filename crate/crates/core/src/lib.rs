pub mod cli;
pub mod cline;
pub mod convolution;
pub mod error;
pub mod mixture;
pub mod numerics;
pub mod paper;
pub mod piecewise;
mod poly;
pub mod probes;
pub mod quad;
pub mod verify;

pub use error::{LabError, Result};
