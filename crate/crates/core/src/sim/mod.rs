//! Discrete-event core: simulated time, a deterministic (time, insertion
//! order) event queue, a latency/jitter/bandwidth network model with FIFO
//! channels, fault descriptions, and the engine tying them to one seeded RNG.

pub mod engine;
pub mod fault;
pub mod net;
pub mod sched;
pub mod time;

pub use engine::{Engine, EngineStats};
pub use fault::{FaultKind, FaultSpec};
pub use net::{LatencyMatrix, NetworkModel};
pub use sched::{EventId, Scheduler};
pub use time::SimTime;
