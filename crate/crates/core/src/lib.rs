//! Quantized decentralized gradient descent: simulation, adaptive stepsizes,
//! and the theoretical bounds that accompany them.

pub mod bounds;
pub mod engine;
pub mod error;
pub mod graph;
pub mod harness;
pub mod problem;
pub mod quantizer;
pub mod rng;
pub mod scheduler;

pub use error::{QdgdError, Result};
