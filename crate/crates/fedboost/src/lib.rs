pub mod crypto;
pub mod data;
pub mod error;
pub mod gbdt;

pub mod metrics;
pub mod scheduler;

pub use error::{Error, Result};
