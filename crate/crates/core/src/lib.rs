pub mod cli;
pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod geodata;
pub mod objective;
pub mod pscnet;
pub mod synthlab;
pub mod trainer;

pub use error::{Error, Result};
