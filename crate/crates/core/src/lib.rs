pub mod cli;
pub mod data;
pub mod dgp;
pub mod error;
pub mod iqr;
pub mod mtest;
pub mod quantreg;
pub mod rng;

pub use error::{Error, Result};
