pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod knn;
pub mod model;
pub mod numeric;
pub mod synthetic;
pub mod train;

pub use error::{Error, ErrorKind, Result};
