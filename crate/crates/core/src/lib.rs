//! What-if analysis for multi-criteria ranking systems.
//!
//! The pipeline: a [`model::RankingSystemSpec`] describes how attributes feed
//! indicators and how indicators combine into a final score. An ensemble
//! [`predictor`] maps candidate attribute values to M member predictions per
//! indicator. The [`scenario`] engine enumerates candidate submissions and
//! filters, sorts and summarizes them; [`influence`] measures how each
//! attribute moves each indicator; [`rival`] estimates the probability of
//! out-scoring other rankees.

pub mod error;
pub mod history;
pub mod influence;
pub mod model;
pub mod predictor;
pub mod rival;
pub mod scenario;
pub mod session;
pub mod synth;

pub use error::{Error, Result};
