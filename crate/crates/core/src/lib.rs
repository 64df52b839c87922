//! Kernel for multi-agent embodied cooperation experiments.

pub mod agents;
pub mod comm;
pub mod constraints;
pub mod env;
pub mod kernel;
pub mod maeil;
pub mod metrics;
pub mod harness;
