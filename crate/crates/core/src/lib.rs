pub mod analysis;
pub mod augmentation;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod filters;
pub mod models;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
