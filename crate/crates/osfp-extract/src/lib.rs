//! Passive extraction of TCP/IP, TLS, and HTTP fingerprints from packet
//! captures, with deterministic pseudonymization of addresses.

pub mod assemble;
pub mod http;
pub mod packet;
pub mod pcapio;
pub mod pseudonym;
pub mod tcp;
pub mod testutil;
pub mod tls;

use thiserror::Error;

pub use assemble::{Assembler, ExtractCounters};
pub use packet::{LinkType, PacketView};
pub use pseudonym::pseudonymize_address;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("malformed packet: {0}")]
    MalformedPacket(&'static str),
    #[error("malformed client hello: {0}")]
    MalformedHello(&'static str),
    #[error("malformed http request: {0}")]
    MalformedRequest(&'static str),
    #[error("pseudonym key must be at least 16 bytes")]
    KeyTooShort,
}

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a capture file: {0}")]
    BadFormat(String),
}

/// Knobs shared by the parsers and the session assembler.
#[derive(Debug, Clone)]
pub struct ExtractOptions {
    /// Round TTLs up to the nearest common initial value {32, 64, 128, 255}.
    pub normalize_ttl: bool,
    /// Collapse GREASE code points to the 2570 sentinel.
    pub normalize_grease: bool,
    /// Bytes scanned for the end of an HTTP header block.
    pub http_scan_limit: usize,
    /// Seconds of inactivity before a session is flushed.
    pub idle_timeout: f64,
    /// Slack added to the timeout for mildly out-of-order captures.
    pub reorder_tolerance: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            normalize_ttl: true,
            normalize_grease: true,
            http_scan_limit: 8192,
            idle_timeout: 300.0,
            reorder_tolerance: 5.0,
        }
    }
}
