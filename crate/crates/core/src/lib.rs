//! Teleoperation simulator for robot-assisted retinal vein cannulation.
//!
//! The modules build on each other: [`geometry`] and [`robot`] move the
//! needle, [`eye_sim`] and [`oct`] model what it meets and what the operator
//! sees, [`workflow`] sequences the procedure, and [`sim`] ties them into a
//! deterministic fixed-step engine whose trials are recorded by
//! [`telemetry`]. [`session`] wraps the engine in the wire protocol.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Refusals carry the wire error message; they are rare and not hot.
#![allow(clippy::result_large_err)]

pub mod config;
pub mod eye_sim;
pub mod geometry;
pub mod oct;
pub mod protocol;
pub mod robot;
pub mod script;
pub mod session;
pub mod sim;
pub mod telemetry;
pub mod workflow;

pub use config::{content_hash, SimConfig};
pub use eye_sim::{FailureCause, Scenario};
pub use protocol::{ClientMessage, ServerMessage};
pub use session::Session;
pub use sim::Simulation;
pub use telemetry::TrialLog;
pub use workflow::Step;
