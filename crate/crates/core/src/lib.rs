//! Evolution of finite-dimensional vector spaces by permissible mutators.

pub mod analysis;
pub mod basis;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod frontier;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
