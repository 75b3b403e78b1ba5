pub mod error;
pub mod nn;

pub use error::{Error, Result};
pub mod signal;
pub mod losses;
pub mod selection;
pub mod model;
pub mod corpus;
pub mod training;
pub mod eval;
pub mod config;
