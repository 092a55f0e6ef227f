//! The centralized reputation manager: a line-delimited JSON protocol over
//! stream sockets, dispatching registration, connection, feedback, and
//! configuration messages onto the core reputation graph.

pub mod config;
pub mod proto;
pub mod server;
pub mod service;

pub use config::{load_proxy_config, ConfigError, ProxyConfig};
pub use proto::{decode_message, encode_message, Message, ProtoError};
pub use server::{ManagerServer, ServerHandle};
pub use service::{Destination, ManagerState, SessionId};
