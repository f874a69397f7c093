pub mod clustering;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod pmdd;
pub mod synth;
pub mod wavelet;

pub use error::{Error, Result};
