//! Fixed 40-byte little-endian wire format.
//!
//! Measurement (`kind = 1`):
//!
//! ```text
//! offset size field
//!      0    1 version
//!      1    1 kind
//!      2    2 sensor id   u16
//!      4    2 bus index   u16
//!      6    2 reserved
//!      8    8 timestamp   u64, ms since epoch
//!     16    8 |v|         f64, pu
//!     24    4 p           f32, W
//!     28    4 q           f32, var
//!     32    4 reserved
//!     36    4 CRC32 (IEEE) of bytes 0..36
//! ```
//!
//! Actuation (`kind = 2`) shares the header and CRC; bytes 16..32 carry the
//! active setpoint (f64, W) and the reactive setpoint (f64, var), and the id
//! field holds the plant index.

use thiserror::Error;

pub const PROTOCOL_VERSION: u8 = 1;
pub const DATAGRAM_LEN: usize = 40;
const CRC_OFFSET: usize = 36;

const KIND_MEASUREMENT: u8 = 1;
const KIND_ACTUATION: u8 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("datagram is {0} bytes, expected {DATAGRAM_LEN}")]
    Length(usize),
    #[error("CRC mismatch: header says {expected:#010x}, payload gives {actual:#010x}")]
    Crc { expected: u32, actual: u32 },
    #[error("unsupported protocol version {0}")]
    Version(u8),
    #[error("unexpected message kind {0}")]
    Kind(u8),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementDatagram {
    pub sensor: u16,
    pub bus: u16,
    pub timestamp_ms: u64,
    pub v_pu: f64,
    pub p_w: f32,
    pub q_var: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuationDatagram {
    pub plant: u16,
    pub bus: u16,
    pub timestamp_ms: u64,
    pub p_w: f64,
    pub q_var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Datagram {
    Measurement(MeasurementDatagram),
    Actuation(ActuationDatagram),
}

fn header(buf: &mut [u8; DATAGRAM_LEN], kind: u8, id: u16, bus: u16, ts: u64) {
    buf[0] = PROTOCOL_VERSION;
    buf[1] = kind;
    buf[2..4].copy_from_slice(&id.to_le_bytes());
    buf[4..6].copy_from_slice(&bus.to_le_bytes());
    buf[8..16].copy_from_slice(&ts.to_le_bytes());
}

fn seal(buf: &mut [u8; DATAGRAM_LEN]) {
    let crc = crc32fast::hash(&buf[..CRC_OFFSET]);
    buf[CRC_OFFSET..].copy_from_slice(&crc.to_le_bytes());
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8-byte slice"))
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_bits(u64_at(b, at))
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().expect("4-byte slice"))
}

impl MeasurementDatagram {
    pub fn encode(&self) -> [u8; DATAGRAM_LEN] {
        let mut buf = [0u8; DATAGRAM_LEN];
        header(&mut buf, KIND_MEASUREMENT, self.sensor, self.bus, self.timestamp_ms);
        buf[16..24].copy_from_slice(&self.v_pu.to_le_bytes());
        buf[24..28].copy_from_slice(&self.p_w.to_le_bytes());
        buf[28..32].copy_from_slice(&self.q_var.to_le_bytes());
        seal(&mut buf);
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        match Datagram::decode(bytes)? {
            Datagram::Measurement(m) => Ok(m),
            Datagram::Actuation(_) => Err(DecodeError::Kind(KIND_ACTUATION)),
        }
    }
}

impl ActuationDatagram {
    pub fn encode(&self) -> [u8; DATAGRAM_LEN] {
        let mut buf = [0u8; DATAGRAM_LEN];
        header(&mut buf, KIND_ACTUATION, self.plant, self.bus, self.timestamp_ms);
        buf[16..24].copy_from_slice(&self.p_w.to_le_bytes());
        buf[24..32].copy_from_slice(&self.q_var.to_le_bytes());
        seal(&mut buf);
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        match Datagram::decode(bytes)? {
            Datagram::Actuation(a) => Ok(a),
            Datagram::Measurement(_) => Err(DecodeError::Kind(KIND_MEASUREMENT)),
        }
    }
}

impl Datagram {
    pub fn encode(&self) -> [u8; DATAGRAM_LEN] {
        match self {
            Self::Measurement(m) => m.encode(),
            Self::Actuation(a) => a.encode(),
        }
    }

    /// Checks length, CRC, version and kind, in that order.
    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        if bytes.len() != DATAGRAM_LEN {
            return Err(DecodeError::Length(bytes.len()));
        }
        let expected = u32::from_le_bytes(bytes[CRC_OFFSET..].try_into().expect("4-byte crc"));
        let actual = crc32fast::hash(&bytes[..CRC_OFFSET]);
        if expected != actual {
            return Err(DecodeError::Crc { expected, actual });
        }
        if bytes[0] != PROTOCOL_VERSION {
            return Err(DecodeError::Version(bytes[0]));
        }
        let id = u16_at(bytes, 2);
        let bus = u16_at(bytes, 4);
        let ts = u64_at(bytes, 8);
        match bytes[1] {
            KIND_MEASUREMENT => Ok(Self::Measurement(MeasurementDatagram {
                sensor: id,
                bus,
                timestamp_ms: ts,
                v_pu: f64_at(bytes, 16),
                p_w: f32_at(bytes, 24),
                q_var: f32_at(bytes, 28),
            })),
            KIND_ACTUATION => Ok(Self::Actuation(ActuationDatagram {
                plant: id,
                bus,
                timestamp_ms: ts,
                p_w: f64_at(bytes, 16),
                q_var: f64_at(bytes, 24),
            })),
            k => Err(DecodeError::Kind(k)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MeasurementDatagram {
        MeasurementDatagram { sensor: 7, bus: 9, timestamp_ms: 1_658_102_400_000, v_pu: 1.0312, p_w: -3200.0, q_var: 150.5 }
    }

    #[test]
    fn layout_is_little_endian() {
        let b = sample().encode();
        assert_eq!(b.len(), 40);
        assert_eq!(b[0], PROTOCOL_VERSION);
        assert_eq!(b[1], 1);
        assert_eq!(&b[2..4], &[7, 0]);
        assert_eq!(&b[4..6], &[9, 0]);
        assert_eq!(&b[8..16], &1_658_102_400_000u64.to_le_bytes());
        assert_eq!(&b[16..24], &1.0312f64.to_le_bytes());
        assert_eq!(&b[36..40], &crc32fast::hash(&b[..36]).to_le_bytes());
    }

    #[test]
    fn roundtrip_and_corruption() {
        let m = sample();
        let mut b = m.encode();
        assert_eq!(MeasurementDatagram::decode(&b), Ok(m));
        b[17] ^= 0x40;
        assert!(matches!(MeasurementDatagram::decode(&b), Err(DecodeError::Crc { .. })));
        assert_eq!(MeasurementDatagram::decode(&b[..39]), Err(DecodeError::Length(39)));
    }

    #[test]
    fn actuation_roundtrip() {
        let a = ActuationDatagram { plant: 1, bus: 11, timestamp_ms: 30_000, p_w: 12_345.5, q_var: -2_000.25 };
        let b = a.encode();
        assert_eq!(ActuationDatagram::decode(&b), Ok(a));
        assert_eq!(MeasurementDatagram::decode(&b), Err(DecodeError::Kind(2)));
    }

    #[test]
    fn rejects_unknown_version() {
        let mut b = sample().encode();
        b[0] = 9;
        let crc = crc32fast::hash(&b[..36]);
        b[36..].copy_from_slice(&crc.to_le_bytes());
        assert_eq!(Datagram::decode(&b), Err(DecodeError::Version(9)));
    }
}
