//! Bias testing for language models with controlled test sentences.
//!
//! The pipeline runs from a [`specs::BiasSpecification`] through sentence
//! generation ([`genpipeline`]) and likelihood scoring ([`scorers`]) to the
//! Stereotype Score and its bootstrap statistics ([`metrics`]). Generated
//! datasets and results persist through [`datastore`]; [`textquality`]
//! reports on how natural and diverse a dataset is.

pub mod datastore;
pub mod genpipeline;
mod http;
pub mod metrics;
pub mod scorers;
pub mod specs;
pub mod textquality;

pub use http::{HttpError, RetryPolicy};
