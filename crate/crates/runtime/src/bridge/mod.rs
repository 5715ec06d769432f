//! Three-channel TCP message bridge.
//!
//! A hub ([`BridgeServer`]) listens on three ports. Publishers write frames to the rx port,
//! subscribers read from the tx port, and both sides exchange `Heartbeat` messages on the
//! heartbeat port. Clients ([`BridgeClient`]) own the registration API.

mod client;
pub mod frame;
mod liveness;
mod server;
mod stats;
mod topic;

use std::io;
use std::time::Duration;

use formation_core::msgs::{DecodeMode, MsgError};
use thiserror::Error;

pub use client::{BridgeClient, Delivery, EndpointRole, Publisher, Subscription};
pub use liveness::{ConnectionState, LinkState, Liveness};
pub use server::BridgeServer;
pub use stats::{StatsBook, TopicStats};
pub use topic::{parse_path, Direction, TopicRegistration, CLOCK_TOPIC};

/// Prefix of hub control topics; never forwarded to subscribers.
pub const CONTROL_PREFIX: &str = "/_bridge/";
pub(crate) const ADVERTISE_TOPIC: &str = "/_bridge/advertise";
pub(crate) const SUBSCRIBE_TOPIC: &str = "/_bridge/subscribe";

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("invalid topic path '{0}'")]
    InvalidTopic(String),
    #[error("topic '{0}' is already registered")]
    DuplicateRegistration(String),
    #[error("unknown schema '{0}'")]
    UnknownSchema(String),
    #[error("{role:?} endpoints may not publish on '{path}'")]
    WrongDirection { path: String, role: EndpointRole },
    #[error("message of schema '{found}' published on '{path}' (expects '{expected}')")]
    SchemaMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Message(#[from] MsgError),
    #[error("transport closed")]
    TransportClosed,
    #[error("not connected to the bridge")]
    Disconnected,
    #[error("clock went backwards: {requested} ns after {last} ns")]
    NonMonotonicClock { last: i64, requested: i64 },
    #[error("port {port} is already in use")]
    PortInUse { port: u16 },
    #[error("cannot reach bridge at {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("malformed frame: {0}")]
    Frame(String),
    #[error("invalid bridge configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeConfig {
    pub host: String,
    /// Port 0 asks the OS for an ephemeral port; see [`BridgeServer::config`].
    pub rx_port: u16,
    pub tx_port: u16,
    pub heartbeat_port: u16,
    pub heartbeat_period: Duration,
    pub liveness_timeout: Duration,
    /// Frames buffered per subscriber and topic before the oldest is dropped.
    pub queue_depth: usize,
    pub decode_mode: DecodeMode,
    /// How long a client keeps retrying the initial connection.
    pub connect_timeout: Duration,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            rx_port: 5550,
            tx_port: 5551,
            heartbeat_port: 5552,
            heartbeat_period: Duration::from_millis(100),
            liveness_timeout: Duration::from_millis(500),
            queue_depth: 1024,
            decode_mode: DecodeMode::Strict,
            connect_timeout: Duration::from_secs(5),
        }
    }
}

impl BridgeConfig {
    /// Loopback configuration on OS-assigned ports, for tests and in-process runs.
    pub fn ephemeral() -> Self {
        Self {
            rx_port: 0,
            tx_port: 0,
            heartbeat_port: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BridgeError> {
        let ports = [self.rx_port, self.tx_port, self.heartbeat_port];
        for i in 0..3 {
            for j in i + 1..3 {
                if ports[i] != 0 && ports[i] == ports[j] {
                    return Err(BridgeError::Config(format!("port {} used twice", ports[i])));
                }
            }
        }
        if self.heartbeat_period.is_zero() {
            return Err(BridgeError::Config("heartbeat period must be positive".into()));
        }
        if self.liveness_timeout <= self.heartbeat_period {
            return Err(BridgeError::Config(format!(
                "liveness timeout {:?} must exceed heartbeat period {:?}",
                self.liveness_timeout, self.heartbeat_period
            )));
        }
        if self.queue_depth == 0 {
            return Err(BridgeError::Config("queue depth must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn addr(&self, port: u16) -> String {
        format!("{}:{}", self.host, port)
    }
}
