//! Datagram codec. Every message is a 20-byte little-endian header
//! followed by a type-specific payload:
//!
//! ```text
//! magic u32 | version u8 | type u8 | pad [0; 2] | seq u32 | t_us u64 | payload
//! ```

use thiserror::Error;

pub const MAGIC: u32 = 0x5656_4531;
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;
/// Largest datagram the codec produces (an ACTORS message with u16::MAX
/// records would exceed UDP limits, so counts are capped here).
pub const MAX_ACTORS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("truncated message: need {need} bytes, got {got}")]
    Truncated { need: usize, got: usize },
    #[error("unsupported message type {0}")]
    UnsupportedType(u8),
    #[error("malformed payload: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    Start = 2,
    Ack = 3,
    Pose = 4,
    Actors = 5,
    Heartbeat = 6,
    Bye = 7,
    /// Actuator command from controller to environment.
    Control = 8,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => MsgType::Hello,
            2 => MsgType::Start,
            3 => MsgType::Ack,
            4 => MsgType::Pose,
            5 => MsgType::Actors,
            6 => MsgType::Heartbeat,
            7 => MsgType::Bye,
            8 => MsgType::Control,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PosePayload {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub beta: f64,
    pub r: f64,
}

impl PosePayload {
    fn is_finite(&self) -> bool {
        [self.x, self.y, self.psi, self.v, self.beta, self.r]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorRecord {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlPayload {
    pub action: u32,
    pub delta_f: f64,
    pub delta_r: f64,
    pub drive_f: f64,
    pub drive_r: f64,
    pub brake_f: f64,
    pub brake_r: f64,
    pub m_zd: f64,
}

impl ControlPayload {
    fn floats(&self) -> [f64; 7] {
        [
            self.delta_f,
            self.delta_r,
            self.drive_f,
            self.drive_r,
            self.brake_f,
            self.brake_r,
            self.m_zd,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ByeReason {
    Done = 0,
    Terminal = 1,
    Incompatible = 2,
    Fault = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Hello { lockstep: bool, config_digest: u64 },
    Start { t0_us: u64 },
    Ack { start_seq: u32 },
    Pose(PosePayload),
    Actors(Vec<ActorRecord>),
    Heartbeat,
    Bye(ByeReason),
    Control(ControlPayload),
}

impl Payload {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Payload::Hello { .. } => MsgType::Hello,
            Payload::Start { .. } => MsgType::Start,
            Payload::Ack { .. } => MsgType::Ack,
            Payload::Pose(_) => MsgType::Pose,
            Payload::Actors(_) => MsgType::Actors,
            Payload::Heartbeat => MsgType::Heartbeat,
            Payload::Bye(_) => MsgType::Bye,
            Payload::Control(_) => MsgType::Control,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub version: u8,
    pub seq: u32,
    pub t_us: u64,
    pub payload: Payload,
}

impl WireMessage {
    pub fn new(seq: u32, t_us: u64, payload: Payload) -> Self {
        WireMessage {
            version: VERSION,
            seq,
            t_us,
            payload,
        }
    }
}

/// Rejects messages that `decode` would refuse, so encoding is total on
/// what it accepts.
pub fn validate(msg: &WireMessage) -> Result<(), DecodeError> {
    match &msg.payload {
        Payload::Pose(p) if !p.is_finite() => Err(DecodeError::Malformed("non-finite pose".into())),
        Payload::Actors(a) => check_actors(a),
        Payload::Control(c) if !c.floats().iter().all(|v| v.is_finite()) => {
            Err(DecodeError::Malformed("non-finite control".into()))
        }
        _ => Ok(()),
    }
}

fn check_actors(a: &[ActorRecord]) -> Result<(), DecodeError> {
    if a.len() > MAX_ACTORS {
        return Err(DecodeError::Malformed(format!("{} actors exceed {MAX_ACTORS}", a.len())));
    }
    for (i, r) in a.iter().enumerate() {
        if ![r.x, r.y, r.heading, r.speed].iter().all(|v| v.is_finite()) {
            return Err(DecodeError::Malformed(format!("actor {} has a non-finite field", r.id)));
        }
        if a[..i].iter().any(|o| o.id == r.id) {
            return Err(DecodeError::Malformed(format!("duplicate actor id {}", r.id)));
        }
    }
    Ok(())
}

pub fn encode(msg: &WireMessage) -> Result<Vec<u8>, DecodeError> {
    validate(msg)?;
    let mut b = Vec::with_capacity(HEADER_LEN + 64);
    b.extend_from_slice(&MAGIC.to_le_bytes());
    b.push(msg.version);
    b.push(msg.payload.msg_type() as u8);
    b.extend_from_slice(&[0, 0]);
    b.extend_from_slice(&msg.seq.to_le_bytes());
    b.extend_from_slice(&msg.t_us.to_le_bytes());
    match &msg.payload {
        Payload::Hello { lockstep, config_digest } => {
            b.push(*lockstep as u8);
            b.extend_from_slice(&config_digest.to_le_bytes());
        }
        Payload::Start { t0_us } => b.extend_from_slice(&t0_us.to_le_bytes()),
        Payload::Ack { start_seq } => b.extend_from_slice(&start_seq.to_le_bytes()),
        Payload::Pose(p) => {
            for v in [p.x, p.y, p.psi, p.v, p.beta, p.r] {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        Payload::Actors(actors) => {
            b.extend_from_slice(&(actors.len() as u16).to_le_bytes());
            for a in actors {
                b.extend_from_slice(&a.id.to_le_bytes());
                for v in [a.x, a.y, a.heading, a.speed] {
                    b.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Payload::Heartbeat => {}
        Payload::Bye(reason) => b.push(*reason as u8),
        Payload::Control(c) => {
            b.extend_from_slice(&c.action.to_le_bytes());
            for v in c.floats() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(b)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let end = self.pos + N;
        if end > self.buf.len() {
            return Err(DecodeError::Truncated {
                need: end,
                got: self.buf.len(),
            });
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.pos..end]);
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<WireMessage, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.u32()?;
    if magic != MAGIC {
        return Err(DecodeError::BadMagic(magic));
    }
    let version = r.u8()?;
    let ty = r.u8()?;
    let pad = r.take::<2>()?;
    let seq = r.u32()?;
    let t_us = r.u64()?;
    let ty = MsgType::from_u8(ty).ok_or(DecodeError::UnsupportedType(ty))?;
    if pad != [0, 0] {
        return Err(DecodeError::Malformed("nonzero header padding".into()));
    }
    let payload = match ty {
        MsgType::Hello => {
            let lockstep = match r.u8()? {
                0 => false,
                1 => true,
                v => return Err(DecodeError::Malformed(format!("lockstep flag {v}"))),
            };
            Payload::Hello {
                lockstep,
                config_digest: r.u64()?,
            }
        }
        MsgType::Start => Payload::Start { t0_us: r.u64()? },
        MsgType::Ack => Payload::Ack { start_seq: r.u32()? },
        MsgType::Pose => Payload::Pose(PosePayload {
            x: r.f64()?,
            y: r.f64()?,
            psi: r.f64()?,
            v: r.f64()?,
            beta: r.f64()?,
            r: r.f64()?,
        }),
        MsgType::Actors => {
            let count = r.u16()? as usize;
            let need = HEADER_LEN + 2 + count * 36;
            if bytes.len() != need {
                return Err(DecodeError::Malformed(format!(
                    "actor count {count} implies {need} bytes, got {}",
                    bytes.len()
                )));
            }
            let mut actors = Vec::with_capacity(count);
            for _ in 0..count {
                actors.push(ActorRecord {
                    id: r.u32()?,
                    x: r.f64()?,
                    y: r.f64()?,
                    heading: r.f64()?,
                    speed: r.f64()?,
                });
            }
            Payload::Actors(actors)
        }
        MsgType::Heartbeat => Payload::Heartbeat,
        MsgType::Bye => Payload::Bye(match r.u8()? {
            0 => ByeReason::Done,
            1 => ByeReason::Terminal,
            2 => ByeReason::Incompatible,
            3 => ByeReason::Fault,
            v => return Err(DecodeError::Malformed(format!("bye reason {v}"))),
        }),
        MsgType::Control => Payload::Control(ControlPayload {
            action: r.u32()?,
            delta_f: r.f64()?,
            delta_r: r.f64()?,
            drive_f: r.f64()?,
            drive_r: r.f64()?,
            brake_f: r.f64()?,
            brake_r: r.f64()?,
            m_zd: r.f64()?,
        }),
    };
    if r.pos != bytes.len() {
        return Err(DecodeError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let msg = WireMessage {
        version,
        seq,
        t_us,
        payload,
    };
    validate(&msg)?;
    Ok(msg)
}
