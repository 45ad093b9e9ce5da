//! Deterministic discrete-event simulation of a geo-distributed transactional
//! database: shard stores with MVCC and two-phase commit, asynchronous redo
//! replication with consistent replica reads, and two interchangeable
//! timestamp authorities (a centralized counter and decentralized
//! bounded-error clocks) that can be swapped while the cluster keeps
//! committing.
//!
//! Everything runs single-threaded off one event queue and one seeded RNG, so
//! a (config, seed) pair fully determines every run, byte for byte. Runs emit
//! a structured history that the checkers in [`verify`] replay against
//! independent oracles.

pub mod authority;
pub mod clocks;
pub mod cluster;
pub mod config;
pub mod error;
pub mod replication;
pub mod report;
pub mod ror;
pub mod sim;
pub mod store;
pub mod timestamp;
pub mod util;
pub mod verify;

pub use cluster::runner::{run_scenario, RunOutput};
pub use config::ScenarioConfig;
pub use error::SimError;
pub use sim::time::SimTime;
pub use timestamp::{Mode, Timestamp};
