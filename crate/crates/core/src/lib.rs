pub mod allocation;
pub mod cli;
pub mod error;
pub mod lp;
pub mod mhr;
pub mod mechanism;
pub mod model;
pub mod rational;
pub mod reduction;
pub mod symmetry;

pub use error::{Error, Result};
