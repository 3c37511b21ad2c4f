//! UDP transport: a fire-and-forget publisher and a receiver thread that
//! decodes, concentrates and hands frames to a drop-oldest queue.

use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::codec::{Datagram, DecodeError, DATAGRAM_LEN};
use crate::concentrator::{AlignedFrame, Concentrator, ConcentratorStats};
use crate::queue::DropOldestQueue;

/// Sends datagrams to a fixed endpoint list. Send errors are counted, never
/// returned: UDP delivery is best effort.
#[derive(Debug)]
pub struct Publisher {
    socket: UdpSocket,
    endpoints: Vec<SocketAddr>,
    sent: u64,
    send_errors: u64,
}

impl Publisher {
    pub fn bind<A: ToSocketAddrs>(local: A, endpoints: Vec<SocketAddr>) -> io::Result<Self> {
        let socket = UdpSocket::bind(local)?;
        socket.set_nonblocking(true)?;
        Ok(Self { socket, endpoints, sent: 0, send_errors: 0 })
    }

    pub fn publish(&mut self, datagrams: &[Datagram]) {
        for d in datagrams {
            let bytes = d.encode();
            for ep in &self.endpoints {
                match self.socket.send_to(&bytes, ep) {
                    Ok(_) => self.sent += 1,
                    Err(_) => self.send_errors += 1,
                }
            }
        }
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn send_errors(&self) -> u64 {
        self.send_errors
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReceiverStats {
    pub received: u64,
    pub crc_failures: u64,
    pub decode_errors: u64,
    pub actuation: u64,
    pub queue_dropped: u64,
    pub concentrator: ConcentratorStats,
}

#[derive(Debug, Default)]
struct Shared {
    stop: AtomicBool,
    received: AtomicU64,
    crc_failures: AtomicU64,
    decode_errors: AtomicU64,
    actuation: AtomicU64,
    concentrator: Mutex<ConcentratorStats>,
}

/// Receiver thread bound to a local UDP port.
pub struct Receiver {
    addr: SocketAddr,
    shared: Arc<Shared>,
    frames: Arc<DropOldestQueue<AlignedFrame>>,
    handle: Option<JoinHandle<()>>,
}

impl Receiver {
    pub fn spawn<A: ToSocketAddrs>(local: A, concentrator: Concentrator, queue_capacity: usize) -> io::Result<Self> {
        let socket = UdpSocket::bind(local)?;
        socket.set_read_timeout(Some(Duration::from_millis(20)))?;
        let addr = socket.local_addr()?;
        let shared = Arc::new(Shared::default());
        let frames = Arc::new(DropOldestQueue::new(queue_capacity));
        let (s, q) = (shared.clone(), frames.clone());
        let handle = std::thread::Builder::new()
            .name("telemetry-rx".into())
            .spawn(move || receive_loop(socket, concentrator, s, q))?;
        Ok(Self { addr, shared, frames, handle: Some(handle) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn frames(&self) -> &DropOldestQueue<AlignedFrame> {
        &self.frames
    }

    pub fn stats(&self) -> ReceiverStats {
        ReceiverStats {
            received: self.shared.received.load(Ordering::Relaxed),
            crc_failures: self.shared.crc_failures.load(Ordering::Relaxed),
            decode_errors: self.shared.decode_errors.load(Ordering::Relaxed),
            actuation: self.shared.actuation.load(Ordering::Relaxed),
            queue_dropped: self.frames.dropped(),
            concentrator: *self.shared.concentrator.lock().expect("stats lock poisoned"),
        }
    }

    /// Stops the thread and returns the final counters together with every
    /// frame still queued, including those flushed from the concentrator.
    pub fn shutdown(mut self) -> (ReceiverStats, Vec<AlignedFrame>) {
        self.stop_and_join();
        (self.stats(), self.frames.drain())
    }

    fn stop_and_join(&mut self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Receiver {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

fn receive_loop(socket: UdpSocket, mut conc: Concentrator, shared: Arc<Shared>, frames: Arc<DropOldestQueue<AlignedFrame>>) {
    let mut buf = [0u8; 2 * DATAGRAM_LEN];
    let publish_stats = |c: &Concentrator| *shared.concentrator.lock().expect("stats lock poisoned") = c.stats();
    loop {
        match socket.recv_from(&mut buf) {
            Ok((n, _)) => {
                shared.received.fetch_add(1, Ordering::Relaxed);
                match Datagram::decode(&buf[..n]) {
                    Ok(Datagram::Measurement(m)) => {
                        for f in conc.push(m) {
                            frames.push(f);
                        }
                        publish_stats(&conc);
                    }
                    Ok(Datagram::Actuation(_)) => {
                        shared.actuation.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(DecodeError::Crc { .. }) => {
                        shared.crc_failures.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(_) => {
                        shared.decode_errors.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                if shared.stop.load(Ordering::Relaxed) {
                    break;
                }
            }
            Err(_) => {
                shared.decode_errors.fetch_add(1, Ordering::Relaxed);
                if shared.stop.load(Ordering::Relaxed) {
                    break;
                }
            }
        }
    }
    for f in conc.flush() {
        frames.push(f);
    }
    publish_stats(&conc);
}
