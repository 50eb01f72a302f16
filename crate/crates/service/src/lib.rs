//! Command line and HTTP front ends for `biastest-core`.
//!
//! The binary wraps [`cli::run`]; [`api::router`] builds the REST service so
//! it can be mounted in tests without binding a port.

pub mod api;
pub mod backends;
pub mod cli;
pub mod error;
pub mod jobs;

pub use error::AppError;
