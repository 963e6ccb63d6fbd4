pub mod analytics;
pub mod bench;
pub mod error;
pub mod flow;
pub mod ingest;
pub mod model;

pub use error::{Error, Result};
pub mod par;
pub mod tracegen;
pub mod variability;
