//! Colocation-aware pairing of batch jobs.
//!
//! The crate is organised along the pipeline it implements:
//!
//! * [`profiles`] ingests solo profiles and colocation measurements and turns
//!   them into directional training samples.
//! * [`model`] trains a random-forest regressor that predicts the slowdown an
//!   application suffers next to another one, and validates it.
//! * [`scheduler`] builds the degradation graph from predictions and pairs the
//!   queue by minimum-weight perfect matching, a greedy heuristic, or the
//!   miss-rate based DI baseline.
//! * [`simulator`] replays schedules against true degradations to project
//!   makespans for every policy, and generates synthetic workloads.

pub mod error;
pub mod model;
pub mod profiles;
pub mod scheduler;
pub mod simulator;

pub use error::{Error, Result};
