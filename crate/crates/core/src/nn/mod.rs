//! Minimal neural-network toolkit: autograd tape, parameters, optimiser.

pub mod graph;
pub mod gradcheck;
pub mod optim;
pub mod params;

pub use graph::{Gradients, Graph, Var};
pub use optim::{AdamW, AdamWConfig, WarmupSchedule};
pub use params::{ParamId, ParamSet};
