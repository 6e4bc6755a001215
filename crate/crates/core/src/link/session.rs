//! Sequenced endpoint, startup handshake and stream bookkeeping.

use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crate::link::codec::{decode, encode, ByeReason, MsgType, Payload, WireMessage, VERSION};
use crate::link::transport::Transport;
use crate::link::LinkError;

/// Wraps a transport with per-type outgoing sequence numbers and decoding.
/// Undecodable datagrams are counted and skipped.
pub struct Endpoint<T: Transport> {
    pub transport: T,
    seq: [u32; 9],
    pub malformed: u64,
}

impl<T: Transport> Endpoint<T> {
    pub fn new(transport: T) -> Self {
        Endpoint {
            transport,
            seq: [0; 9],
            malformed: 0,
        }
    }

    pub fn send(&mut self, t_us: u64, payload: Payload) -> Result<u32, LinkError> {
        let slot = payload.msg_type() as usize;
        let seq = self.seq[slot];
        self.send_with_seq(seq, t_us, payload)?;
        self.seq[slot] = seq.wrapping_add(1);
        Ok(seq)
    }

    /// Retransmission with an explicit sequence number.
    pub fn send_with_seq(&mut self, seq: u32, t_us: u64, payload: Payload) -> Result<(), LinkError> {
        let bytes = encode(&WireMessage::new(seq, t_us, payload))?;
        self.transport.send(&bytes)?;
        Ok(())
    }

    /// Next decodable message, or `None` once `timeout` has elapsed.
    pub fn recv(&mut self, timeout: Duration) -> Result<Option<WireMessage>, LinkError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let Some(bytes) = self.transport.recv(left)? else {
                return Ok(None);
            };
            match decode(&bytes) {
                Ok(m) => return Ok(Some(m)),
                Err(e) => {
                    self.malformed += 1;
                    log::debug!("dropping undecodable datagram: {e}");
                }
            }
            if Instant::now() >= deadline {
                return Ok(None);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Session {
    pub t0_us: u64,
    pub start_seq: u32,
    pub lockstep: bool,
}

pub fn wall_clock_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

/// Controller side: HELLO every `timeout / 5` until START arrives, then ACK.
pub fn controller_handshake<T: Transport>(
    ep: &mut Endpoint<T>,
    timeout: Duration,
    lockstep: bool,
    config_digest: u64,
) -> Result<Session, LinkError> {
    let deadline = Instant::now() + timeout;
    let retry = timeout / 5;
    while Instant::now() < deadline {
        ep.send(
            wall_clock_us(),
            Payload::Hello {
                lockstep,
                config_digest,
            },
        )?;
        let round_end = (Instant::now() + retry).min(deadline);
        while let Some(msg) = ep.recv(round_end.saturating_duration_since(Instant::now()))? {
            match msg.payload {
                Payload::Start { t0_us } => {
                    ep.send(wall_clock_us(), Payload::Ack { start_seq: msg.seq })?;
                    return Ok(Session {
                        t0_us,
                        start_seq: msg.seq,
                        lockstep,
                    });
                }
                Payload::Bye(ByeReason::Incompatible) => {
                    return Err(LinkError::IncompatiblePeer(
                        "environment rejected the HELLO (version or configuration differs)".into(),
                    ))
                }
                _ => {}
            }
        }
    }
    Err(LinkError::HandshakeFailed(format!(
        "no START from the environment within {timeout:?}"
    )))
}

/// Environment side: wait for HELLO, answer START, wait for the matching
/// ACK. Repeated HELLOs get the same START again.
pub fn environment_handshake<T: Transport>(
    ep: &mut Endpoint<T>,
    timeout: Duration,
    lockstep: bool,
    config_digest: u64,
) -> Result<Session, LinkError> {
    let deadline = Instant::now() + timeout;
    let retry = timeout / 5;
    let mut start: Option<(u32, u64)> = None;
    let mut last_sent = Instant::now();
    while Instant::now() < deadline {
        let wait = match start {
            Some(_) => (last_sent + retry).saturating_duration_since(Instant::now()),
            None => deadline.saturating_duration_since(Instant::now()),
        };
        let msg = ep.recv(wait.min(deadline.saturating_duration_since(Instant::now())))?;
        match msg {
            Some(m) => match m.payload {
                Payload::Hello {
                    lockstep: peer_lockstep,
                    config_digest: peer_digest,
                } => {
                    if m.version != VERSION || peer_lockstep != lockstep || peer_digest != config_digest {
                        ep.send(wall_clock_us(), Payload::Bye(ByeReason::Incompatible))?;
                        return Err(LinkError::IncompatiblePeer(format!(
                            "peer version {} mode {} digest {peer_digest:016x}, local version {VERSION} mode {} digest {config_digest:016x}",
                            m.version,
                            mode_name(peer_lockstep),
                            mode_name(lockstep)
                        )));
                    }
                    let (seq, t0) = match start {
                        Some(s) => s,
                        None => {
                            let t0 = wall_clock_us();
                            let seq = ep.send(t0, Payload::Start { t0_us: t0 })?;
                            start = Some((seq, t0));
                            last_sent = Instant::now();
                            continue;
                        }
                    };
                    ep.send_with_seq(seq, t0, Payload::Start { t0_us: t0 })?;
                    last_sent = Instant::now();
                }
                Payload::Ack { start_seq } => {
                    if let Some((seq, t0)) = start {
                        if start_seq == seq {
                            return Ok(Session {
                                t0_us: t0,
                                start_seq: seq,
                                lockstep,
                            });
                        }
                    }
                }
                _ => {}
            },
            None => {
                if let Some((seq, t0)) = start {
                    ep.send_with_seq(seq, t0, Payload::Start { t0_us: t0 })?;
                    last_sent = Instant::now();
                }
            }
        }
    }
    Err(LinkError::HandshakeFailed(format!(
        "no complete HELLO/ACK exchange within {timeout:?}"
    )))
}

fn mode_name(lockstep: bool) -> &'static str {
    if lockstep {
        "lockstep"
    } else {
        "free"
    }
}

/// Sequence bookkeeping for one incoming stream: gaps are counted, and a
/// message older than the newest accepted one is discarded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StreamTracker {
    last: Option<u32>,
    pub gaps: u64,
    pub stale: u64,
    pub accepted: u64,
}

impl StreamTracker {
    pub fn accept(&mut self, seq: u32) -> bool {
        match self.last {
            Some(l) if seq <= l => {
                self.stale += 1;
                false
            }
            prev => {
                let expected = prev.map_or(0, |l| l + 1);
                self.gaps += (seq - expected) as u64;
                self.last = Some(seq);
                self.accepted += 1;
                true
            }
        }
    }
}

/// Tracks one stream per message type of interest.
#[derive(Debug, Clone, Default)]
pub struct Streams {
    pub pose: StreamTracker,
    pub actors: StreamTracker,
}

impl Streams {
    pub fn accept(&mut self, msg: &WireMessage) -> bool {
        match msg.payload.msg_type() {
            MsgType::Pose => self.pose.accept(msg.seq),
            MsgType::Actors => self.actors.accept(msg.seq),
            _ => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::transport::MemoryTransport;

    #[test]
    fn freshest_pose_rule() {
        let mut t = StreamTracker::default();
        assert!(t.accept(0));
        assert!(t.accept(1));
        assert!(t.accept(4));
        assert_eq!(t.gaps, 2);
        assert!(!t.accept(3));
        assert!(!t.accept(4));
        assert_eq!(t.stale, 2);
        assert!(t.accept(5));
        assert_eq!(t.gaps, 2);
    }

    #[test]
    fn nominal_handshake_shares_t0() {
        let (a, b) = MemoryTransport::pair();
        let env = std::thread::spawn(move || {
            let mut ep = Endpoint::new(b);
            environment_handshake(&mut ep, Duration::from_secs(5), true, 42)
        });
        let mut ep = Endpoint::new(a);
        let c = controller_handshake(&mut ep, Duration::from_secs(5), true, 42).unwrap();
        let e = env.join().unwrap().unwrap();
        assert_eq!(c, e);
    }

    #[test]
    fn absent_environment_times_out() {
        let (a, _b) = MemoryTransport::pair();
        let mut ep = Endpoint::new(a);
        let t = Instant::now();
        let r = controller_handshake(&mut ep, Duration::from_millis(200), true, 0);
        assert!(matches!(r, Err(LinkError::HandshakeFailed(_))));
        assert!(t.elapsed() >= Duration::from_millis(200));
    }

    #[test]
    fn mismatched_configuration_is_incompatible() {
        let (a, b) = MemoryTransport::pair();
        let env = std::thread::spawn(move || {
            let mut ep = Endpoint::new(b);
            environment_handshake(&mut ep, Duration::from_secs(5), true, 1)
        });
        let mut ep = Endpoint::new(a);
        let c = controller_handshake(&mut ep, Duration::from_secs(5), true, 2);
        assert!(matches!(c, Err(LinkError::IncompatiblePeer(_))));
        assert!(matches!(env.join().unwrap(), Err(LinkError::IncompatiblePeer(_))));
    }

    #[test]
    fn duplicate_start_yields_one_session() {
        // Environment side driven by hand: it answers two HELLOs with the
        // same START sequence number.
        let (a, b) = MemoryTransport::pair();
        let mut env = Endpoint::new(b);
        let mut ctl = Endpoint::new(a);
        env.send_with_seq(5, 100, Payload::Start { t0_us: 100 }).unwrap();
        env.send_with_seq(5, 100, Payload::Start { t0_us: 100 }).unwrap();
        let s = controller_handshake(&mut ctl, Duration::from_secs(1), false, 0).unwrap();
        assert_eq!((s.start_seq, s.t0_us), (5, 100));
        // Exactly one ACK, after the HELLO.
        let mut acks = 0;
        while let Some(m) = env.recv(Duration::from_millis(20)).unwrap() {
            if let Payload::Ack { start_seq } = m.payload {
                assert_eq!(start_seq, 5);
                acks += 1;
            }
        }
        assert_eq!(acks, 1);
    }
}
