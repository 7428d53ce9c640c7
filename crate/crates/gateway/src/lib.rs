//! Live session bridge: a websocket endpoint that streams simulator state and
//! takes human steering commands, plus `/health` and `/config`.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{Ack, Envelope, Hello, SessionCommand, TelemetryFrame, Thumbnail, PROTOCOL_VERSION};
pub use server::{Gateway, Health, SERVER_VERSION};
pub use session::{GatewayConfig, Session, THUMBNAIL_PX};
