//! Deterministic simulator and experiment harness for federated averaging.
//!
//! The crate simulates FedAvg-style optimization over `N` devices that each
//! run `E` local stochastic steps between communication rounds, with three
//! local update rules (plain SGD, Nesterov momentum, and MaSS momentum with a
//! gradient compensation term), full or sampled device participation, and the
//! step-size schedules used by the accompanying experiments.
//!
//! Everything is driven by counter-based random streams, so a run is a pure
//! function of its configuration: re-running a config reproduces the exact
//! trajectory bit for bit, regardless of evaluation parallelism.

// negated float comparisons like `!(x > 0.0)` are NaN-rejecting guards
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod error;
pub mod experiments;
pub mod federation;
pub mod linalg;
pub mod objectives;
pub mod rng;
pub mod schedules;

pub use dataio::{Dataset, DevicePartition};
pub use error::{Error, Result};
pub use federation::{FederationConfig, Sampling, Trajectory, UpdateRule};
pub use objectives::{LossKind, Objective, SpectralReport};
pub use schedules::Schedule;
