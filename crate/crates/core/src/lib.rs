pub mod analysis;
pub mod compiler;
pub mod error;
pub mod numerics;

pub use error::{Error, Result};
pub mod grad;
pub mod models;
pub mod poly;
pub mod runner;
pub mod tasks;
