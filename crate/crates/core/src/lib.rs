//! Monte Carlo uncertainty propagation through a two-stage Transform/Combine
//! pipeline, with analytic bias expressions for the replicate constructions
//! and a seeded experiment harness to check them.

pub mod analytics;
pub mod cli;
pub mod error;
pub mod error_models;
pub mod exec;
pub mod lab;
pub mod linalg;
pub mod pipeline;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
