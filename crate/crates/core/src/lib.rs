//! Joint latent-factor modeling of product-review helpfulness.
//!
//! The crate ingests (user, item, rating, text, timestamp) review
//! quintuples with helpfulness votes, learns per-level facet and word
//! distributions coupled to a ridge regression on consistency and latent
//! features, and scores or ranks unseen reviews by predicted helpfulness.
//!
//! Modules follow the pipeline: [`corpus`] prepares data, [`features`]
//! derives the observed scalars, [`model`] owns the latent state,
//! [`inference`] runs the alternating training loop, [`eval`] measures
//! prediction and ranking quality, [`synth`] simulates corpora with known
//! ground truth, [`snapshot`] persists trained models and [`pipeline`]
//! wires the stages into the CLI-facing commands. [`oracle`] holds
//! independent solvers used to cross-check the regression fit.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod inference;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod snapshot;
pub mod synth;

pub use config::Config;
pub use error::{CoreError, Result};
