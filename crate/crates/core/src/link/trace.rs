//! Recorded real-world pose traces and their replay into the virtual frame.

use std::io::{Read, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::link::codec::{ByeReason, Payload, PosePayload};
use crate::link::latency::{LatencyChannel, LatencyModel};
use crate::link::session::{Endpoint, StreamTracker};
use crate::link::transform::{inverse_transform, transform_pose, FrameTransform};
use crate::link::transport::Transport;
use crate::link::LinkError;
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t_us: u64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
}

impl TraceRow {
    pub fn from_vehicle(t_us: u64, v: &VehicleState) -> Self {
        TraceRow {
            t_us,
            x: v.x,
            y: v.y,
            psi: v.psi,
            v: v.v,
        }
    }

    pub fn pose(&self) -> PosePayload {
        PosePayload {
            x: self.x,
            y: self.y,
            psi: self.psi,
            v: self.v,
            ..Default::default()
        }
    }
}

pub const TRACE_HEADER: [&str; 5] = ["t_us", "x", "y", "psi", "v"];

pub fn write_trace<W: Write>(w: W, rows: &[TraceRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(TRACE_HEADER)?;
    for r in rows {
        wr.write_record([
            r.t_us.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.psi.to_string(),
            r.v.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a trace, rejecting bad rows with their line number. Timestamps
/// must be strictly increasing.
pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRow>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rd.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != TRACE_HEADER {
        return Err(CoreError::invalid(format!(
            "trace line 1: expected header `{}`, found `{}`",
            TRACE_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows: Vec<TraceRow> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: String| CoreError::invalid(format!("trace line {line}: {what}"));
        if rec.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", rec.len())));
        }
        let t_us: u64 = rec[0]
            .parse()
            .map_err(|_| bad(format!("t_us `{}` is not a non-negative integer", &rec[0])))?;
        let mut vals = [0.0; 4];
        for (i, v) in vals.iter_mut().enumerate() {
            let field = &rec[i + 1];
            *v = field
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| bad(format!("{} `{field}` is not a finite number", TRACE_HEADER[i + 1])))?;
        }
        if let Some(prev) = rows.last() {
            if t_us <= prev.t_us {
                return Err(bad(format!("t_us {t_us} does not increase (previous {})", prev.t_us)));
            }
        }
        rows.push(TraceRow {
            t_us,
            x: vals[0],
            y: vals[1],
            psi: vals[2],
            v: vals[3],
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pacing {
    Realtime,
    #[default]
    Max,
}

/// Streams the trace as POSE messages in the virtual frame, stamped with
/// the recorded times, and ends with BYE.
pub fn send_trace<T: Transport>(
    ep: &mut Endpoint<T>,
    rows: &[TraceRow],
    transform: &FrameTransform,
    pacing: Pacing,
) -> std::result::Result<(), LinkError> {
    let start = Instant::now();
    let t0 = rows.first().map_or(0, |r| r.t_us);
    for r in rows {
        if pacing == Pacing::Realtime {
            let due = start + Duration::from_micros(r.t_us - t0);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        ep.send(r.t_us, Payload::Pose(transform_pose(&r.pose(), transform)))?;
    }
    ep.send(rows.last().map_or(0, |r| r.t_us), Payload::Bye(ByeReason::Done))?;
    Ok(())
}

/// A pose received by the virtual twin with its virtual arrival time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub arrival_us: u64,
    pub sent_us: u64,
    pub pose: PosePayload,
}

#[derive(Debug, Default)]
pub struct TwinLog {
    pub arrivals: Vec<Arrival>,
    pub stream: StreamTracker,
    pub dropped: u64,
}

/// Virtual-twin side: applies the latency model to each incoming POSE and
/// keeps the ones that survive, until BYE or silence.
pub fn receive_trace<T: Transport>(
    ep: &mut Endpoint<T>,
    latency: LatencyModel,
    timeout: Duration,
) -> Result<TwinLog> {
    let mut ch: LatencyChannel<()> = LatencyChannel::new(latency)?;
    let mut log = TwinLog::default();
    loop {
        let Some(msg) = ep.recv(timeout)? else {
            return Err(LinkError::HeartbeatTimeout(timeout).into());
        };
        match msg.payload {
            Payload::Pose(p) => {
                if !log.stream.accept(msg.seq) {
                    continue;
                }
                if let Some(arrival_us) = ch.schedule(msg.t_us) {
                    log.arrivals.push(Arrival {
                        arrival_us,
                        sent_us: msg.t_us,
                        pose: p,
                    });
                }
            }
            Payload::Bye(_) => break,
            _ => {}
        }
    }
    log.dropped = ch.dropped;
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub rows: usize,
    /// Last minus first trace timestamp.
    pub span_us: u64,
    pub compared: usize,
    pub dropped: u64,
    pub sequence_gaps: u64,
    /// Virtual twin vs the transformed trace.
    pub rms_error_m: f64,
    pub max_error_m: f64,
    /// Virtual twin mapped back vs the original trace.
    pub rms_error_real_frame_m: f64,
    pub heading_rms_rad: f64,
}

/// At each trace time, compares the freshest pose the twin had received
/// with where the vehicle really was.
pub fn overlap(rows: &[TraceRow], log: &TwinLog, transform: &FrameTransform) -> OverlapReport {
    let mut idx = 0usize;
    let mut held: Option<&Arrival> = None;
    let (mut se, mut se_real, mut se_psi, mut max) = (0.0, 0.0, 0.0, 0.0f64);
    let mut n = 0usize;
    for r in rows {
        while idx < log.arrivals.len() && log.arrivals[idx].arrival_us <= r.t_us {
            held = Some(&log.arrivals[idx]);
            idx += 1;
        }
        let Some(a) = held else { continue };
        let truth = transform_pose(&r.pose(), transform);
        let d = (a.pose.x - truth.x).hypot(a.pose.y - truth.y);
        let back = inverse_transform(&a.pose, transform);
        let d_real = (back.x - r.x).hypot(back.y - r.y);
        let dpsi = crate::sim::geometry::wrap_angle(a.pose.psi - truth.psi);
        se += d * d;
        se_real += d_real * d_real;
        se_psi += dpsi * dpsi;
        max = max.max(d);
        n += 1;
    }
    let rms = |s: f64| if n == 0 { f64::NAN } else { (s / n as f64).sqrt() };
    OverlapReport {
        rows: rows.len(),
        span_us: match (rows.first(), rows.last()) {
            (Some(a), Some(b)) => b.t_us - a.t_us,
            _ => 0,
        },
        compared: n,
        dropped: log.dropped,
        sequence_gaps: log.stream.gaps,
        rms_error_m: rms(se),
        max_error_m: if n == 0 { f64::NAN } else { max },
        rms_error_real_frame_m: rms(se_real),
        heading_rms_rad: rms(se_psi),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            TraceRow {
                t_us: 0,
                x: 1.5,
                y: -0.25,
                psi: 0.1,
                v: 3.0,
            },
            TraceRow {
                t_us: 10_000,
                x: 1.53,
                y: -0.25,
                psi: 0.1000001,
                v: 3.0,
            },
        ];
        let mut buf = Vec::new();
        write_trace(&mut buf, &rows).unwrap();
        assert_eq!(read_trace(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn bad_row_names_its_line() {
        let text = "t_us,x,y,psi,v\n0,0,0,0,1\n10,0,abc,0,1\n";
        let e = read_trace(text.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("`abc`"), "{e}");
        let text = "t_us,x,y,psi,v\n10,0,0,0,1\n5,0,0,0,1\n";
        let e = read_trace(text.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("does not increase"), "{e}");
    }
}
