//! JSON publish/subscribe bridge exposing a running simulation over TCP and
//! WebSocket. See the README for the topic table and payload schemas.

pub mod hub;
pub mod protocol;
pub mod queue;
pub mod server;
pub mod table;
pub mod topics;

pub use hub::{PlannerMode, SimBridge, TickMode};
pub use protocol::{decode, encode, BusMessage, DecodeError, Op};
pub use server::{start, ServerConfig, ServerHandle};
