//! Websocket endpoint around a live [`Simulation`](safe_topp::sim::Simulation).
//!
//! The control loop runs on its own thread and owns the world. Clients see
//! snapshots through a watch channel and push obstacle intent through a
//! per-obstacle mailbox, so a slow or stuck client never delays a cycle.

pub mod control;
pub mod protocol;
pub mod server;

pub use control::{clamp_command, Catalog, Session};
pub use protocol::{ClientMessage, ServerMessage, StateFrame, SummaryMsg};
pub use server::{ServeConfig, Server};
