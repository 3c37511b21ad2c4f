//! Loopback soak run: simulated sensors publish one datagram per second of
//! simulated time to a local receiver.

use std::io;
use std::time::Duration;

use crate::codec::{Datagram, MeasurementDatagram};
use crate::concentrator::{Concentrator, DEFAULT_WINDOW_MS};
use crate::udp::{Publisher, Receiver, ReceiverStats};

#[derive(Debug, Clone, Copy)]
pub struct SoakConfig {
    pub sensors: u16,
    pub seconds: u64,
    /// Wall-clock pause between simulated seconds.
    pub pacing: Duration,
    /// Per-sensor timestamp offset inside the alignment window, ms.
    pub jitter_ms: u64,
}

impl Default for SoakConfig {
    fn default() -> Self {
        Self { sensors: 14, seconds: 600, pacing: Duration::from_micros(500), jitter_ms: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoakReport {
    pub sent: u64,
    pub send_errors: u64,
    pub frames: u64,
    pub complete_frames: u64,
    pub receiver: ReceiverStats,
}

impl SoakReport {
    /// Complete frames over expected frames.
    pub fn completeness(&self, expected: u64) -> f64 {
        self.complete_frames as f64 / expected as f64
    }
}

pub fn loopback_soak(cfg: SoakConfig) -> io::Result<SoakReport> {
    let sensors: Vec<u16> = (0..cfg.sensors).collect();
    let conc = Concentrator::new(sensors.clone(), 1000, DEFAULT_WINDOW_MS);
    let rx = Receiver::spawn("127.0.0.1:0", conc, 4096)?;
    let mut tx = Publisher::bind("127.0.0.1:0", vec![rx.local_addr()])?;
    let t0 = 1_658_102_400_000u64;
    let mut frames = 0u64;
    let mut complete = 0u64;
    for s in 0..cfg.seconds {
        let batch: Vec<Datagram> = sensors
            .iter()
            .map(|&id| {
                let jitter = (id as u64 * 7 + s) % (2 * cfg.jitter_ms + 1);
                Datagram::Measurement(MeasurementDatagram {
                    sensor: id,
                    bus: id + 1,
                    timestamp_ms: t0 + s * 1000 + jitter - cfg.jitter_ms,
                    v_pu: 1.0 + 1e-4 * id as f64,
                    p_w: 1000.0 * id as f32,
                    q_var: -50.0 * id as f32,
                })
            })
            .collect();
        tx.publish(&batch);
        std::thread::sleep(cfg.pacing);
        while let Some(f) = rx.frames().try_pop() {
            frames += 1;
            complete += f.is_complete() as u64;
        }
    }
    std::thread::sleep(Duration::from_millis(50));
    let (sent, send_errors) = (tx.sent(), tx.send_errors());
    let (receiver, rest) = rx.shutdown();
    for f in rest {
        frames += 1;
        complete += f.is_complete() as u64;
    }
    Ok(SoakReport { sent, send_errors, frames, complete_frames: complete, receiver })
}
