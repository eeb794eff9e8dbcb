//! Deterministic frame-based simulator for IEEE 802.16 downlink
//! scheduling. Implements an adaptive priority-based scheduler (APDS)
//! with two baselines (global FIFO, strict-priority deficit round
//! robin), frame-level traffic generation, and CSV metrics.

pub mod allocation;
pub mod baselines;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod priority;
pub mod scenario;
pub mod traffic;
pub mod types;

pub use baselines::SchedulerKind;
pub use engine::{run_simulation, run_with_scheduler, RunResult, SimState};
pub use error::SimError;
pub use scenario::Scenario;
