//! Event-time alignment of per-sensor datagrams into grid-wide frames.
//!
//! A datagram belongs to the frame whose nominal timestamp (a multiple of the
//! reporting period) lies within `window_ms` of its own. A frame is emitted
//! as soon as every expected sensor has reported, or as a partial frame once
//! a datagram later than `frame + window_ms` has been seen. Anything arriving
//! for an already emitted frame is counted as late and dropped.

use std::collections::BTreeMap;

use crate::codec::MeasurementDatagram;

pub const DEFAULT_WINDOW_MS: u64 = 100;
pub const MAX_SENSORS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFrame {
    pub timestamp_ms: u64,
    /// One slot per expected sensor, in configuration order.
    pub measurements: Vec<Option<MeasurementDatagram>>,
    /// Bit `k` set when slot `k` is filled.
    pub bitmap: u64,
}

impl AlignedFrame {
    pub fn is_complete(&self) -> bool {
        self.bitmap.count_ones() as usize == self.measurements.len()
    }

    pub fn missing(&self) -> usize {
        self.measurements.len() - self.bitmap.count_ones() as usize
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConcentratorStats {
    pub accepted: u64,
    pub duplicates: u64,
    pub late: u64,
    pub misaligned: u64,
    pub unknown_sensor: u64,
    pub complete_frames: u64,
    pub partial_frames: u64,
    pub max_pending: usize,
}

#[derive(Debug, Clone)]
pub struct Concentrator {
    sensors: Vec<u16>,
    period_ms: u64,
    window_ms: u64,
    pending: BTreeMap<u64, AlignedFrame>,
    watermark: Option<u64>,
    last_emitted: Option<u64>,
    stats: ConcentratorStats,
}

impl Concentrator {
    pub fn new(sensors: Vec<u16>, period_ms: u64, window_ms: u64) -> Self {
        assert!(!sensors.is_empty() && sensors.len() <= MAX_SENSORS, "between 1 and {MAX_SENSORS} sensors");
        assert!(period_ms > 0, "reporting period must be positive");
        assert!(2 * window_ms < period_ms, "alignment window must be below half the period");
        Self {
            sensors,
            period_ms,
            window_ms,
            pending: BTreeMap::new(),
            watermark: None,
            last_emitted: None,
            stats: ConcentratorStats::default(),
        }
    }

    pub fn stats(&self) -> ConcentratorStats {
        self.stats
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Upper bound on simultaneously pending frames.
    pub fn pending_bound(&self) -> usize {
        (self.window_ms / self.period_ms) as usize + 1
    }

    fn nominal(&self, ts: u64) -> Option<u64> {
        let key = (ts + self.period_ms / 2) / self.period_ms * self.period_ms;
        (key.abs_diff(ts) <= self.window_ms).then_some(key)
    }

    /// Feeds one datagram and returns the frames it completes or expires,
    /// oldest first.
    pub fn push(&mut self, d: MeasurementDatagram) -> Vec<AlignedFrame> {
        let mut out = Vec::new();
        let Some(slot) = self.sensors.iter().position(|&s| s == d.sensor) else {
            self.stats.unknown_sensor += 1;
            return out;
        };
        let Some(key) = self.nominal(d.timestamp_ms) else {
            self.stats.misaligned += 1;
            return out;
        };
        if self.last_emitted.is_some_and(|last| key <= last) {
            self.stats.late += 1;
            return out;
        }
        self.watermark = Some(self.watermark.map_or(d.timestamp_ms, |w| w.max(d.timestamp_ms)));
        self.expire(&mut out);
        if self.watermark.is_some_and(|w| key + self.window_ms < w) {
            // its frame would already have expired
            self.stats.late += 1;
            return out;
        }

        let n = self.sensors.len();
        let frame = self.pending.entry(key).or_insert_with(|| AlignedFrame {
            timestamp_ms: key,
            measurements: vec![None; n],
            bitmap: 0,
        });
        if frame.bitmap >> slot & 1 == 1 {
            self.stats.duplicates += 1;
        } else {
            frame.measurements[slot] = Some(d);
            frame.bitmap |= 1 << slot;
            self.stats.accepted += 1;
        }
        self.stats.max_pending = self.stats.max_pending.max(self.pending.len());
        if self.pending[&key].is_complete() {
            // older partial frames go first
            let older: Vec<u64> = self.pending.range(..key).map(|(&k, _)| k).collect();
            for k in older {
                let f = self.pending.remove(&k).expect("pending frame");
                self.emit(f, &mut out);
            }
            let f = self.pending.remove(&key).expect("pending frame");
            self.emit(f, &mut out);
        }
        out
    }

    fn expire(&mut self, out: &mut Vec<AlignedFrame>) {
        let Some(w) = self.watermark else { return };
        while let Some((&k, _)) = self.pending.first_key_value() {
            if k + self.window_ms >= w {
                break;
            }
            let f = self.pending.remove(&k).expect("pending frame");
            self.emit(f, out);
        }
    }

    fn emit(&mut self, f: AlignedFrame, out: &mut Vec<AlignedFrame>) {
        if f.is_complete() {
            self.stats.complete_frames += 1;
        } else {
            self.stats.partial_frames += 1;
        }
        self.last_emitted = Some(self.last_emitted.map_or(f.timestamp_ms, |l| l.max(f.timestamp_ms)));
        out.push(f);
    }

    /// Emits every pending frame (used at shutdown).
    pub fn flush(&mut self) -> Vec<AlignedFrame> {
        let mut out = Vec::new();
        let frames: Vec<AlignedFrame> = std::mem::take(&mut self.pending).into_values().collect();
        for f in frames {
            self.emit(f, &mut out);
        }
        out
    }
}
