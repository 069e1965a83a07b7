pub mod caputo;
pub mod error;
pub mod femcore;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod msbasis;
pub mod schemes;
pub mod stability;

pub use error::{Error, Result};
