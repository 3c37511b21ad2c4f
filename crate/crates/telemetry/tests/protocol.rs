use proptest::prelude::*;
use std::time::Duration;
use voltguard_telemetry::*;

fn bits_equal(a: &MeasurementDatagram, b: &MeasurementDatagram) -> bool {
    a.sensor == b.sensor
        && a.bus == b.bus
        && a.timestamp_ms == b.timestamp_ms
        && a.v_pu.to_bits() == b.v_pu.to_bits()
        && a.p_w.to_bits() == b.p_w.to_bits()
        && a.q_var.to_bits() == b.q_var.to_bits()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100_000))]

    #[test]
    fn decode_inverts_encode(
        sensor in any::<u16>(),
        bus in any::<u16>(),
        ts in any::<u64>(),
        v in any::<u64>(),
        p in any::<u32>(),
        q in any::<u32>(),
    ) {
        let m = MeasurementDatagram {
            sensor, bus, timestamp_ms: ts,
            v_pu: f64::from_bits(v), p_w: f32::from_bits(p), q_var: f32::from_bits(q),
        };
        let back = MeasurementDatagram::decode(&m.encode()).unwrap();
        prop_assert!(bits_equal(&m, &back));
    }
}

proptest! {
    #[test]
    fn single_bit_flip_is_detected(byte in 0usize..36, bit in 0u8..8, ts in any::<u64>()) {
        let m = MeasurementDatagram { sensor: 3, bus: 4, timestamp_ms: ts, v_pu: 1.01, p_w: 5.0, q_var: -1.0 };
        let mut b = m.encode();
        b[byte] ^= 1 << bit;
        let crc_error = matches!(Datagram::decode(&b), Err(DecodeError::Crc { .. }));
        prop_assert!(crc_error);
    }

    #[test]
    fn pending_frames_stay_bounded(offsets in proptest::collection::vec((0u16..7, 0u64..60, 0u64..201), 1..400)) {
        let mut c = Concentrator::new((0..7).collect(), 1000, DEFAULT_WINDOW_MS);
        for (sensor, second, jitter) in offsets {
            let ts = 10_000 + second * 1000 + jitter;
            let ts = ts.saturating_sub(100);
            c.push(MeasurementDatagram { sensor, bus: sensor, timestamp_ms: ts, v_pu: 1.0, p_w: 0.0, q_var: 0.0 });
            prop_assert!(c.pending() <= c.pending_bound());
        }
    }
}

#[test]
fn loopback_delivery_validates_crc() {
    let conc = Concentrator::new(vec![0, 1], 1000, DEFAULT_WINDOW_MS);
    let rx = Receiver::spawn("127.0.0.1:0", conc, 16).unwrap();
    let mut tx = Publisher::bind("127.0.0.1:0", vec![rx.local_addr()]).unwrap();
    let batch: Vec<Datagram> = (0..2)
        .map(|s| Datagram::Measurement(MeasurementDatagram { sensor: s, bus: s, timestamp_ms: 1000, v_pu: 1.0, p_w: 0.0, q_var: 0.0 }))
        .collect();
    tx.publish(&batch);
    let frame = rx.frames().pop_timeout(Duration::from_secs(2)).expect("frame");
    assert!(frame.is_complete());
    let (stats, _) = rx.shutdown();
    assert_eq!(stats.crc_failures, 0);
    assert_eq!(stats.received, 2);
}

#[test]
fn unreachable_endpoint_does_not_panic() {
    // port 9 on a documentation address: sends either fail or vanish
    let mut tx = Publisher::bind("127.0.0.1:0", vec!["192.0.2.1:9".parse().unwrap()]).unwrap();
    let d = Datagram::Measurement(MeasurementDatagram { sensor: 0, bus: 0, timestamp_ms: 0, v_pu: 1.0, p_w: 0.0, q_var: 0.0 });
    for _ in 0..10 {
        tx.publish(&[d]);
    }
    assert_eq!(tx.sent() + tx.send_errors(), 10);
}

#[test]
fn soak_fourteen_sensors_ten_minutes() {
    let cfg = SoakConfig::default();
    let r = loopback_soak(cfg).unwrap();
    assert_eq!(r.receiver.crc_failures, 0);
    assert!(r.completeness(cfg.seconds) >= 0.999, "{r:?}");
}
