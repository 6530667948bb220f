pub mod batch;
pub mod bottleneck;
pub mod checkpoint;
pub mod dsp;
pub mod error;
pub mod flow;
pub mod metrics;
pub mod nn;
pub mod repr_eval;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
