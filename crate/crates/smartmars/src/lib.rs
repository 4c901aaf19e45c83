//! Component middleware for robotics systems: typed communication
//! patterns, lifecycle/wiring management, real-time task mapping and
//! schedulability analysis, plus a deployment checker and simulation
//! harness.

pub mod analysis;
pub mod clock;
pub mod cli;
pub mod deploy;
pub mod model;
pub mod runtime;
pub mod scenario;
pub mod task;
pub mod wire;
