//! A simulated teleoperation cell: the control loop and UDP position stream,
//! the HTTP monitoring service with push events, and the clients that drive
//! them.

pub mod client;
pub mod hub;
pub mod monitor;
pub mod runtime;
pub mod teleop;
pub mod wire_client;

pub use runtime::{Cell, CellLink, CellOptions};
