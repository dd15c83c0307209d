pub mod data;
pub mod error;
pub mod inference;
pub mod losses;
pub mod model;
pub mod report;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
