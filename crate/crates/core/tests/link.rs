use std::panic::catch_unwind;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vve_core::config::PipelineConfig;
use vve_core::link::codec::{decode, encode, ActorRecord, ByeReason, ControlPayload, DecodeError, PosePayload};
use vve_core::link::trace::{overlap, receive_trace, send_trace, write_trace, Pacing, TraceRow};
use vve_core::link::transform::{inverse_transform, transform_pose};
use vve_core::link::{Endpoint, FrameTransform, LatencyModel, MemoryTransport, Payload, WireMessage};
use vve_core::pipeline::{vve_replay, RunDir};

fn random_pose(rng: &mut ChaCha8Rng) -> PosePayload {
    PosePayload {
        x: rng.gen_range(-500.0..500.0),
        y: rng.gen_range(-500.0..500.0),
        psi: rng.gen_range(-3.14..3.14),
        v: rng.gen_range(0.0..40.0),
        beta: rng.gen_range(-0.3..0.3),
        r: rng.gen_range(-1.0..1.0),
    }
}

fn random_message(rng: &mut ChaCha8Rng) -> WireMessage {
    let payload = match rng.gen_range(0..8) {
        0 => Payload::Hello {
            lockstep: rng.gen(),
            config_digest: rng.gen(),
        },
        1 => Payload::Start { t0_us: rng.gen() },
        2 => Payload::Ack { start_seq: rng.gen() },
        3 => Payload::Pose(random_pose(rng)),
        4 => {
            let n = rng.gen_range(0..6);
            Payload::Actors(
                (0..n)
                    .map(|i| ActorRecord {
                        id: i * 3 + rng.gen_range(0..3),
                        x: rng.gen_range(-100.0..100.0),
                        y: rng.gen_range(-100.0..100.0),
                        heading: rng.gen_range(-3.0..3.0),
                        speed: rng.gen_range(0.0..3.0),
                    })
                    .collect(),
            )
        }
        5 => Payload::Heartbeat,
        6 => Payload::Bye(match rng.gen_range(0..4) {
            0 => ByeReason::Done,
            1 => ByeReason::Terminal,
            2 => ByeReason::Incompatible,
            _ => ByeReason::Fault,
        }),
        _ => Payload::Control(ControlPayload {
            action: rng.gen_range(0..5),
            delta_f: rng.gen_range(-0.5..0.5),
            brake_f: rng.gen_range(0.0..3000.0),
            brake_r: rng.gen_range(0.0..2000.0),
            ..Default::default()
        }),
    };
    WireMessage::new(rng.gen(), rng.gen(), payload)
}

#[test]
fn decode_is_total_on_noise_and_mutations() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..50_000 {
        let bytes: Vec<u8> = if i % 2 == 0 {
            let n = rng.gen_range(0..96);
            (0..n).map(|_| rng.gen()).collect()
        } else {
            // Valid header, damaged body: reaches the payload parsers.
            let mut b = encode(&random_message(&mut rng)).unwrap();
            let k = rng.gen_range(0..b.len());
            b[k] = rng.gen();
            b.truncate(rng.gen_range(0..=b.len()));
            b
        };
        let r = catch_unwind(|| decode(&bytes));
        assert!(r.is_ok(), "decode panicked on {bytes:02x?}");
    }
}

#[test]
fn truncated_and_unknown_type_are_typed() {
    let b = encode(&WireMessage::new(1, 2, Payload::Pose(PosePayload::default()))).unwrap();
    assert!(matches!(decode(&b[..30]), Err(DecodeError::Truncated { .. })));
    let mut t = b.clone();
    t[5] = 200;
    assert_eq!(decode(&t), Err(DecodeError::UnsupportedType(200)));
}

#[test]
fn random_messages_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10_000 {
        let m = random_message(&mut rng);
        let bytes = encode(&m).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode(&back).unwrap(), bytes);
    }
}

#[test]
fn transform_round_trip_on_random_poses() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let t = FrameTransform::new(
            (rng.gen_range(-200.0..200.0), rng.gen_range(-200.0..200.0)),
            rng.gen_range(-3.1..3.1),
            (rng.gen_range(-200.0..200.0), rng.gen_range(-200.0..200.0)),
        );
        let p = random_pose(&mut rng);
        let q = inverse_transform(&transform_pose(&p, &t), &t);
        worst = worst.max((q.x - p.x).hypot(q.y - p.y));
    }
    assert!(worst <= 1e-12, "worst round trip {worst:e} m");
}

fn straight_trace(n: usize, v: f64, dt_us: u64) -> Vec<TraceRow> {
    (0..n)
        .map(|k| {
            let t = k as u64 * dt_us;
            TraceRow {
                t_us: t,
                x: 3.0 + v * t as f64 * 1e-6,
                y: -1.0,
                psi: 0.2,
                v,
            }
        })
        .collect()
}

fn replay(rows: &[TraceRow], transform: FrameTransform, latency: LatencyModel, pacing: Pacing) -> (Vec<PosePayload>, vve_core::link::trace::OverlapReport) {
    let (a, b) = MemoryTransport::pair();
    let sent = rows.to_vec();
    let sender = std::thread::spawn(move || send_trace(&mut Endpoint::new(a), &sent, &transform, pacing).unwrap());
    let log = receive_trace(&mut Endpoint::new(b), latency, Duration::from_secs(2)).unwrap();
    sender.join().unwrap();
    let poses = log.arrivals.iter().map(|a| a.pose).collect();
    (poses, overlap(rows, &log, &transform))
}

#[test]
fn empty_trace_completes_cleanly() {
    let (poses, report) = replay(&[], FrameTransform::identity(), LatencyModel::default(), Pacing::Max);
    assert!(poses.is_empty());
    assert_eq!((report.rows, report.compared, report.span_us), (0, 0, 0));
}

#[test]
fn identity_replay_is_bit_for_bit() {
    let rows = straight_trace(200, 15.0, 10_000);
    let (poses, report) = replay(&rows, FrameTransform::identity(), LatencyModel::default(), Pacing::Max);
    assert_eq!(poses.len(), rows.len());
    for (p, r) in poses.iter().zip(&rows) {
        assert_eq!(*p, r.pose());
    }
    assert_eq!(report.rms_error_m, 0.0);
    assert_eq!(report.span_us, 1_990_000);
}

#[test]
fn rotated_replay_maps_back() {
    let rows = straight_trace(200, 15.0, 10_000);
    let t = FrameTransform::new((3.0, -1.0), 1.1, (250.0, 40.0));
    let (_, report) = replay(&rows, t, LatencyModel::default(), Pacing::Max);
    assert!(report.rms_error_m <= 1e-9, "{report:?}");
    assert!(report.rms_error_real_frame_m <= 1e-9, "{report:?}");
}

#[test]
fn latency_error_is_speed_times_delay() {
    let rows = straight_trace(300, 15.0, 10_000);
    let lat = LatencyModel {
        base_delay_ms: 20.0,
        ..Default::default()
    };
    let (_, report) = replay(&rows, FrameTransform::identity(), lat, Pacing::Max);
    assert!((report.max_error_m - 0.3).abs() < 1e-9, "{report:?}");
    assert_eq!(report.compared, rows.len() - 2);
}

#[test]
fn realtime_pacing_keeps_gaps() {
    let rows = straight_trace(2, 1.0, 100_000);
    let (a, b) = MemoryTransport::pair();
    let sender = std::thread::spawn(move || {
        send_trace(&mut Endpoint::new(a), &rows, &FrameTransform::identity(), Pacing::Realtime).unwrap()
    });
    let mut ep = Endpoint::new(b);
    let mut seen = Vec::new();
    while let Some(m) = ep.recv(Duration::from_secs(2)).unwrap() {
        seen.push(Instant::now());
        if matches!(m.payload, Payload::Bye(_)) {
            break;
        }
    }
    sender.join().unwrap();
    let gap = seen[1] - seen[0];
    assert!(gap >= Duration::from_millis(95) && gap <= Duration::from_millis(150), "{gap:?}");
}

#[test]
fn replay_command_writes_virtual_trace() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("real.csv");
    write_trace(std::fs::File::create(&input).unwrap(), &straight_trace(50, 10.0, 10_000)).unwrap();
    let cfg = PipelineConfig::default();
    let mut out = RunDir::create(&dir.path().join("out")).unwrap();
    let report = vve_replay(&cfg, &input, &mut out).unwrap();
    assert!(report.rms_error_m <= 1e-9);
    let text = std::fs::read_to_string(dir.path().join("out/virtual_trace.csv")).unwrap();
    assert_eq!(text.lines().count(), 51);
    assert!(dir.path().join("out/overlap.json").exists());
}
