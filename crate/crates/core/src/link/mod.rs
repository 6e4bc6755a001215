//! Wire protocol, transports and the co-simulation loops.

pub mod codec;
pub mod hil;
pub mod latency;
pub mod session;
pub mod trace;
pub mod transform;
pub mod transport;

use std::time::Duration;

use thiserror::Error;

pub use codec::{DecodeError, Payload, WireMessage};
pub use latency::{LatencyChannel, LatencyModel};
pub use session::{Endpoint, Session};
pub use transform::FrameTransform;
pub use transport::{MemoryTransport, Transport, UdpTransport};

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("malformed message: {0}")]
    Decode(#[from] DecodeError),

    #[error("handshake failed: {0}")]
    HandshakeFailed(String),

    #[error("incompatible peer: {0}")]
    IncompatiblePeer(String),

    #[error("heartbeat timeout: peer silent for {0:?}")]
    HeartbeatTimeout(Duration),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
