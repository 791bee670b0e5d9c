pub mod analysis;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evolution;
pub mod numeric;
pub mod training;

pub use error::{Error, Result};
