pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod model;
pub mod strategy;
pub mod template;
pub mod tensor;
pub mod vocab;

pub use error::{Error, Result};
