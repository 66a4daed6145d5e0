pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod model;
pub mod numeric;
pub mod propagation;
pub mod transr;

pub use error::{Error, Result};
