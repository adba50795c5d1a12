pub mod collapse;
pub mod compression;
pub mod error;
pub mod experiments;
pub mod network;
pub mod parsimony;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Matrix, Seed};
