//! Recognition of functional motion primitives in rehabilitation videos with
//! vision-language models, plus the metrics and baselines used to score them.

pub mod activity;
pub mod error;
pub mod fma;
pub mod ingest;
pub mod metrics;
pub mod output;
pub mod par;
pub mod primpipe;
pub mod primrs;
pub mod reconstruct;
pub mod types;
pub mod vlm;

pub use error::{Error, ErrorCategory, ParseValueError, Result};
