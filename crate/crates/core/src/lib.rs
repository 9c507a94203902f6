pub mod analysis;
pub mod cantor;
pub mod construction;
pub mod error;
mod lanes;
pub mod periodic;
pub mod sl2;

pub use error::{Error, Result};
