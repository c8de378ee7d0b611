pub mod error;
pub mod evaluation;
pub mod formats;
pub mod gradcheck;
pub mod groundtruth;
pub mod model;
pub mod parallel;
pub mod training;
pub mod tensor;

pub use error::{Error, FormatError, Result};
