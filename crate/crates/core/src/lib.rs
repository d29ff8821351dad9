pub mod bridges;
pub mod environment;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod paths;
pub mod refwalks;
pub mod rng;
pub mod sizebias;
pub mod stats;

pub use error::{Error, Result};
