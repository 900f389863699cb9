//! Sensor fault detection with group testing.
//!
//! Sensors observing a linear dynamical system are tested in pools: each pool
//! is split into two subgroups, a Kalman filter runs on each, and the pool is
//! flagged when the two state estimates disagree. Pools are designed either
//! non-adaptively (random measurement matrix + minimum-distance decoding) or
//! adaptively (Bayesian belief tracking with variance-maximizing pools).
//!
//! Modules:
//! - [`lds`]: state-space models and simulation
//! - [`faults`]: fault states and fault injection
//! - [`kalman`]: filtering and the subgroup-discrepancy group test
//! - [`cgt`]: measurement matrices, disjunctness, boolean tests, decoding
//! - [`bgt`]: Bayesian adaptive group testing
//! - [`baselines`]: Hwang's splitting and leave-one-out Kalman banks
//! - [`harness`]: Monte-Carlo trials, sweeps, config and CSV output

pub mod baselines;
pub mod bgt;
pub mod cgt;
pub mod error;
pub mod faults;
pub mod harness;
pub mod kalman;
pub mod lds;
pub mod rng;

pub use error::{Error, Result};
