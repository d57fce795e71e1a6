pub mod augment;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod field_data;
pub mod io;
pub mod model;
pub mod numerics;
pub mod refiner;
pub mod train;

pub use error::{Error, Result};
