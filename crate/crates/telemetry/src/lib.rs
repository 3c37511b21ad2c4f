//! Measurement streaming between simulated sensors and the controller: a
//! fixed-width UDP datagram format, a timestamp-aligning concentrator and
//! the socket plumbing around them.

pub mod codec;
pub mod concentrator;
pub mod queue;
pub mod soak;
pub mod udp;

pub use codec::{ActuationDatagram, Datagram, DecodeError, MeasurementDatagram, DATAGRAM_LEN, PROTOCOL_VERSION};
pub use concentrator::{AlignedFrame, Concentrator, ConcentratorStats, DEFAULT_WINDOW_MS};
pub use queue::DropOldestQueue;
pub use soak::{loopback_soak, SoakConfig, SoakReport};
pub use udp::{Publisher, Receiver, ReceiverStats};
