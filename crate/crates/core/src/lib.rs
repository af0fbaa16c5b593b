pub mod bench;
pub mod certificates;
pub mod cli;
pub mod error;
pub mod flow;
pub mod measures;
pub mod problems;
pub mod seeds;

pub use error::{Error, Result};
