//! Cluster wiring: topology, node roles, message protocol, transaction
//! coordination, workload generation, and the scenario runner that drives all
//! of it inside the simulation engine.

pub mod coordinator;
pub mod history;
pub mod messages;
pub mod runner;
pub mod topology;
pub mod workload;
pub mod world;
