//! Service and command line around `rankforge-core`.

pub mod api;
pub mod cli;
pub mod store;
