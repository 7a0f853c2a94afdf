//! Humans-as-agents service: a WebSocket endpoint (`/ws`) that runs one
//! PointGoal episode session per connection and logs every trajectory.
//!
//! Client messages: `reset {episode_id}`, `act {action}`, `list_episodes`.
//! Server messages: `hello`, `episodes`, `observation`, `done`, `error`.
//! A session has at most one request in flight; a request sent before the
//! previous reply arrived gets an `out_of_order` error. A terminal `act`
//! replies with its observation followed by `done`.

pub mod protocol;
mod server;

pub use protocol::{decode_png_field, encode_observation, ClientMessage, ServerMessage};
pub use server::{bind, router, serve, ServeError, ServerConfig, TeleopState, TrajectoryRecord};
