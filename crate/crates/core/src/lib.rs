pub mod alignment;
pub mod config;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod scrb;
pub mod seed;
pub mod tag;
pub mod train;

pub use error::{CoreError, Result};
