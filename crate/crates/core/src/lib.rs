pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod networks;
pub mod pipeline;
pub mod selftest;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
