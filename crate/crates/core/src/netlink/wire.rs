//! Length-prefixed binary frames exchanged between the nodes.
//!
//! ```text
//! u32 length (LE, counts tag + payload) | u8 tag | payload
//! ```
//!
//! | tag | message     | payload                                                         |
//! |-----|-------------|-----------------------------------------------------------------|
//! | 1   | SensorPair  | u32 seq, u64 t_us, u8 gripper_pos, 100 B left, 100 B right     |
//! | 2   | Command     | u32 seq, u64 t_us, i16 target_tilt_deg, u8 gripper_pos, u8 mode |
//! | 3   | Electrode   | u32 seq, u64 t_us, 20 B left, 20 B right, u8 predicted          |
//! | 4   | Heartbeat   | u32 seq, u64 t_us                                               |
//! | 5   | GraspResult | u32 seq, u64 t_us, u8 success, i16 relative centidegrees, u32 ticks |
//!
//! The Command mode byte holds the feedback mode (0..=2) in its low bits and
//! the grasp request in bit 7. An Electrode `predicted` of 255 means no
//! prediction.

use std::fmt;

use thiserror::Error;

use crate::tactile::{FeedbackMode, ELECTRODE_CELLS, MAX_GRIPPER_POS, SENSOR_SIDE};

pub const TAG_SENSOR_PAIR: u8 = 1;
pub const TAG_COMMAND: u8 = 2;
pub const TAG_ELECTRODE: u8 = 3;
pub const TAG_HEARTBEAT: u8 = 4;
pub const TAG_GRASP_RESULT: u8 = 5;

pub const HEADER_LEN: usize = 5;
/// Largest length field any valid frame carries, with headroom.
pub const MAX_FRAME_LEN: u32 = 1024;
pub const NO_PREDICTION: u8 = 255;
const GRASP_BIT: u8 = 0x80;

const GRID: usize = SENSOR_SIDE * SENSOR_SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorPair {
    pub seq: u32,
    pub t_us: u64,
    pub gripper_pos: u8,
    pub left: [u8; GRID],
    pub right: [u8; GRID],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Command {
    pub seq: u32,
    pub t_us: u64,
    pub target_tilt_deg: i16,
    pub gripper_pos: u8,
    pub mode: FeedbackMode,
    pub grasp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Electrode {
    pub seq: u32,
    pub t_us: u64,
    pub left: [u8; ELECTRODE_CELLS],
    pub right: [u8; ELECTRODE_CELLS],
    pub predicted: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Heartbeat {
    pub seq: u32,
    pub t_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraspResult {
    pub seq: u32,
    pub t_us: u64,
    pub success: bool,
    /// Relative pipette/TCP angle at grasp time, hundredths of a degree.
    pub relative_centideg: i16,
    pub ticks_used: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WireMessage {
    SensorPair(SensorPair),
    Command(Command),
    Electrode(Electrode),
    Heartbeat(Heartbeat),
    GraspResult(GraspResult),
}

impl WireMessage {
    pub fn tag(&self) -> u8 {
        match self {
            WireMessage::SensorPair(_) => TAG_SENSOR_PAIR,
            WireMessage::Command(_) => TAG_COMMAND,
            WireMessage::Electrode(_) => TAG_ELECTRODE,
            WireMessage::Heartbeat(_) => TAG_HEARTBEAT,
            WireMessage::GraspResult(_) => TAG_GRASP_RESULT,
        }
    }

    pub fn seq(&self) -> u32 {
        match self {
            WireMessage::SensorPair(m) => m.seq,
            WireMessage::Command(m) => m.seq,
            WireMessage::Electrode(m) => m.seq,
            WireMessage::Heartbeat(m) => m.seq,
            WireMessage::GraspResult(m) => m.seq,
        }
    }

    pub fn t_us(&self) -> u64 {
        match self {
            WireMessage::SensorPair(m) => m.t_us,
            WireMessage::Command(m) => m.t_us,
            WireMessage::Electrode(m) => m.t_us,
            WireMessage::Heartbeat(m) => m.t_us,
            WireMessage::GraspResult(m) => m.t_us,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            WireMessage::SensorPair(_) => "SensorPair",
            WireMessage::Command(_) => "Command",
            WireMessage::Electrode(_) => "Electrode",
            WireMessage::Heartbeat(_) => "Heartbeat",
            WireMessage::GraspResult(_) => "GraspResult",
        }
    }
}

/// Payload size (excluding length and tag) for each tag.
pub fn payload_len(tag: u8) -> Option<usize> {
    match tag {
        TAG_SENSOR_PAIR => Some(4 + 8 + 1 + 2 * GRID),
        TAG_COMMAND => Some(4 + 8 + 2 + 1 + 1),
        TAG_ELECTRODE => Some(4 + 8 + 2 * ELECTRODE_CELLS + 1),
        TAG_HEARTBEAT => Some(4 + 8),
        TAG_GRASP_RESULT => Some(4 + 8 + 1 + 2 + 4),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolErrorKind {
    Truncated { needed: usize, available: usize },
    UnknownTag(u8),
    LengthMismatch { declared: usize, expected: usize },
    FrameTooLarge(u32),
    InvalidField(&'static str),
    SeqRegression { last: u32, got: u32 },
    UnexpectedMessage(&'static str),
}

impl fmt::Display for ProtocolErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Truncated { needed, available } => {
                write!(f, "truncated frame: need {needed} bytes, have {available}")
            }
            Self::UnknownTag(t) => write!(f, "unknown message tag {t}"),
            Self::LengthMismatch { declared, expected } => {
                write!(f, "length field {declared} does not match expected {expected}")
            }
            Self::FrameTooLarge(n) => write!(f, "frame length {n} exceeds {MAX_FRAME_LEN}"),
            Self::InvalidField(name) => write!(f, "invalid value in field {name}"),
            Self::SeqRegression { last, got } => {
                write!(f, "sequence went from {last} to {got}")
            }
            Self::UnexpectedMessage(name) => write!(f, "unexpected {name} message"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("protocol error at byte {offset}: {kind}")]
pub struct ProtocolError {
    pub offset: usize,
    pub kind: ProtocolErrorKind,
}

impl ProtocolError {
    pub fn new(offset: usize, kind: ProtocolErrorKind) -> Self {
        Self { offset, kind }
    }
}

pub fn encode_msg(m: &WireMessage) -> Vec<u8> {
    let tag = m.tag();
    let plen = payload_len(tag).expect("every variant has a size");
    let mut out = Vec::with_capacity(HEADER_LEN + plen);
    out.extend_from_slice(&((plen + 1) as u32).to_le_bytes());
    out.push(tag);
    out.extend_from_slice(&m.seq().to_le_bytes());
    out.extend_from_slice(&m.t_us().to_le_bytes());
    match m {
        WireMessage::SensorPair(p) => {
            out.push(p.gripper_pos);
            out.extend_from_slice(&p.left);
            out.extend_from_slice(&p.right);
        }
        WireMessage::Command(c) => {
            out.extend_from_slice(&c.target_tilt_deg.to_le_bytes());
            out.push(c.gripper_pos);
            out.push(c.mode.code() | if c.grasp { GRASP_BIT } else { 0 });
        }
        WireMessage::Electrode(e) => {
            out.extend_from_slice(&e.left);
            out.extend_from_slice(&e.right);
            out.push(e.predicted);
        }
        WireMessage::Heartbeat(_) => {}
        WireMessage::GraspResult(g) => {
            out.push(u8::from(g.success));
            out.extend_from_slice(&g.relative_centideg.to_le_bytes());
            out.extend_from_slice(&g.ticks_used.to_le_bytes());
        }
    }
    debug_assert_eq!(out.len(), HEADER_LEN + plen);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], ProtocolError> {
        if self.buf.len() - self.pos < N {
            return Err(ProtocolError::new(
                self.pos,
                ProtocolErrorKind::Truncated {
                    needed: N,
                    available: self.buf.len() - self.pos,
                },
            ));
        }
        let mut a = [0u8; N];
        a.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take::<1>()?[0])
    }
}

/// Inspects the 5-byte header; returns `(tag, total frame length)`.
pub fn peek_header(bytes: &[u8]) -> Result<(u8, usize), ProtocolError> {
    if bytes.len() < HEADER_LEN {
        return Err(ProtocolError::new(
            0,
            ProtocolErrorKind::Truncated {
                needed: HEADER_LEN,
                available: bytes.len(),
            },
        ));
    }
    let declared = u32::from_le_bytes(bytes[..4].try_into().unwrap());
    if declared > MAX_FRAME_LEN {
        return Err(ProtocolError::new(0, ProtocolErrorKind::FrameTooLarge(declared)));
    }
    let tag = bytes[4];
    let plen = payload_len(tag).ok_or(ProtocolError::new(4, ProtocolErrorKind::UnknownTag(tag)))?;
    if declared as usize != plen + 1 {
        return Err(ProtocolError::new(
            0,
            ProtocolErrorKind::LengthMismatch {
                declared: declared as usize,
                expected: plen + 1,
            },
        ));
    }
    Ok((tag, HEADER_LEN + plen))
}

/// Decodes exactly one frame; trailing bytes are an error.
pub fn decode_msg(bytes: &[u8]) -> Result<WireMessage, ProtocolError> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(ProtocolError::new(
            used,
            ProtocolErrorKind::LengthMismatch {
                declared: used - 4,
                expected: bytes.len() - 4,
            },
        ));
    }
    Ok(msg)
}

/// Decodes the frame at the start of `bytes`, returning it and its length.
pub fn decode_prefix(bytes: &[u8]) -> Result<(WireMessage, usize), ProtocolError> {
    let (tag, total) = peek_header(bytes)?;
    if bytes.len() < total {
        return Err(ProtocolError::new(
            bytes.len(),
            ProtocolErrorKind::Truncated {
                needed: total,
                available: bytes.len(),
            },
        ));
    }
    let mut c = Cursor {
        buf: &bytes[..total],
        pos: HEADER_LEN,
    };
    let seq = u32::from_le_bytes(c.take()?);
    let t_us = u64::from_le_bytes(c.take()?);
    let msg = match tag {
        TAG_SENSOR_PAIR => {
            let at = c.pos;
            let gripper_pos = c.u8()?;
            if gripper_pos > MAX_GRIPPER_POS {
                return Err(ProtocolError::new(at, ProtocolErrorKind::InvalidField("gripper_pos")));
            }
            WireMessage::SensorPair(SensorPair {
                seq,
                t_us,
                gripper_pos,
                left: c.take()?,
                right: c.take()?,
            })
        }
        TAG_COMMAND => {
            let target_tilt_deg = i16::from_le_bytes(c.take()?);
            let at = c.pos;
            let gripper_pos = c.u8()?;
            if gripper_pos > MAX_GRIPPER_POS {
                return Err(ProtocolError::new(at, ProtocolErrorKind::InvalidField("gripper_pos")));
            }
            let at = c.pos;
            let raw = c.u8()?;
            let mode = FeedbackMode::from_code(raw & !GRASP_BIT)
                .ok_or(ProtocolError::new(at, ProtocolErrorKind::InvalidField("mode")))?;
            WireMessage::Command(Command {
                seq,
                t_us,
                target_tilt_deg,
                gripper_pos,
                mode,
                grasp: raw & GRASP_BIT != 0,
            })
        }
        TAG_ELECTRODE => {
            let left = c.take()?;
            let right = c.take()?;
            let at = c.pos;
            let predicted = c.u8()?;
            if predicted != NO_PREDICTION && usize::from(predicted) >= crate::tactile::TiltClass::COUNT {
                return Err(ProtocolError::new(at, ProtocolErrorKind::InvalidField("predicted")));
            }
            WireMessage::Electrode(Electrode {
                seq,
                t_us,
                left,
                right,
                predicted,
            })
        }
        TAG_HEARTBEAT => WireMessage::Heartbeat(Heartbeat { seq, t_us }),
        TAG_GRASP_RESULT => {
            let at = c.pos;
            let success = match c.u8()? {
                0 => false,
                1 => true,
                _ => return Err(ProtocolError::new(at, ProtocolErrorKind::InvalidField("success"))),
            };
            WireMessage::GraspResult(GraspResult {
                seq,
                t_us,
                success,
                relative_centideg: i16::from_le_bytes(c.take()?),
                ticks_used: u32::from_le_bytes(c.take()?),
            })
        }
        other => unreachable!("tag {other} validated by peek_header"),
    };
    Ok((msg, total))
}

/// Reassembles frames from an arbitrarily chunked byte stream.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    consumed: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame, `None` when more bytes are needed. After an error
    /// the stream cannot be resynchronized and the buffer is cleared.
    pub fn next_frame(&mut self) -> Option<Result<WireMessage, ProtocolError>> {
        let start = self.consumed;
        Some(self.next_raw()?.and_then(|(_, raw)| {
            decode_prefix(&raw).map(|(m, _)| m).map_err(|mut e| {
                e.offset += start;
                e
            })
        }))
    }

    /// Like [`FrameDecoder::next_frame`] but only checks the header and
    /// returns the tag with the undecoded frame bytes.
    pub fn next_raw(&mut self) -> Option<Result<(u8, Vec<u8>), ProtocolError>> {
        if self.buf.len() < HEADER_LEN {
            return None;
        }
        match peek_header(&self.buf) {
            Err(mut e) => {
                e.offset += self.consumed;
                self.consumed += self.buf.len();
                self.buf.clear();
                Some(Err(e))
            }
            Ok((_, total)) if self.buf.len() < total => None,
            Ok((tag, total)) => {
                let raw: Vec<u8> = self.buf.drain(..total).collect();
                self.consumed += total;
                Some(Ok((tag, raw)))
            }
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

/// Enforces strictly increasing sequence numbers from one sender.
#[derive(Debug, Default, Clone)]
pub struct SeqTracker {
    last: Option<u32>,
}

impl SeqTracker {
    pub fn check(&mut self, seq: u32) -> Result<(), ProtocolError> {
        if let Some(last) = self.last {
            if seq <= last {
                return Err(ProtocolError::new(0, ProtocolErrorKind::SeqRegression { last, got: seq }));
            }
        }
        self.last = Some(seq);
        Ok(())
    }

    pub fn last(&self) -> Option<u32> {
        self.last
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heartbeat_zero_bytes() {
        let f = encode_msg(&WireMessage::Heartbeat(Heartbeat { seq: 0, t_us: 0 }));
        let mut expect = vec![0x0D, 0x00, 0x00, 0x00, 0x04];
        expect.extend([0u8; 12]);
        assert_eq!(f, expect);
    }

    #[test]
    fn frame_sizes() {
        assert_eq!(payload_len(TAG_SENSOR_PAIR), Some(213));
        assert_eq!(payload_len(TAG_COMMAND), Some(16));
        assert_eq!(payload_len(TAG_ELECTRODE), Some(53));
        assert_eq!(payload_len(TAG_HEARTBEAT), Some(12));
    }

    #[test]
    fn command_layout() {
        let c = WireMessage::Command(Command {
            seq: 7,
            t_us: 0x0102,
            target_tilt_deg: -30,
            gripper_pos: 12,
            mode: FeedbackMode::CnnPattern,
            grasp: true,
        });
        let f = encode_msg(&c);
        assert_eq!(&f[..5], &[17, 0, 0, 0, 2]);
        assert_eq!(&f[5..9], &7u32.to_le_bytes());
        assert_eq!(&f[17..19], &(-30i16).to_le_bytes());
        assert_eq!(f[19], 12);
        assert_eq!(f[20], 0x82);
        assert_eq!(decode_msg(&f).unwrap(), c);
    }

    #[test]
    fn truncated_input() {
        let e = decode_msg(&[0x0D, 0x00, 0x00]).unwrap_err();
        assert!(matches!(e.kind, ProtocolErrorKind::Truncated { .. }));
        let f = encode_msg(&WireMessage::Heartbeat(Heartbeat { seq: 1, t_us: 2 }));
        let e = decode_msg(&f[..10]).unwrap_err();
        assert_eq!(e.offset, 10);
    }

    #[test]
    fn bad_header_fields() {
        let mut f = encode_msg(&WireMessage::Heartbeat(Heartbeat { seq: 1, t_us: 2 }));
        f[4] = 9;
        assert_eq!(decode_msg(&f).unwrap_err().kind, ProtocolErrorKind::UnknownTag(9));
        assert_eq!(decode_msg(&f).unwrap_err().offset, 4);
        let mut f = encode_msg(&WireMessage::Heartbeat(Heartbeat { seq: 1, t_us: 2 }));
        f[0] = 14;
        assert!(matches!(
            decode_msg(&f).unwrap_err().kind,
            ProtocolErrorKind::LengthMismatch { .. }
        ));
        f[3] = 0xFF;
        assert!(matches!(
            decode_msg(&f).unwrap_err().kind,
            ProtocolErrorKind::FrameTooLarge(_)
        ));
        let mut f = encode_msg(&WireMessage::Heartbeat(Heartbeat { seq: 1, t_us: 2 }));
        f.push(0);
        assert!(decode_msg(&f).is_err());
    }

    #[test]
    fn bad_field_values() {
        let mut f = encode_msg(&WireMessage::Command(Command {
            seq: 1,
            t_us: 1,
            target_tilt_deg: 0,
            gripper_pos: 0,
            mode: FeedbackMode::None,
            grasp: false,
        }));
        f[20] = 3;
        let e = decode_msg(&f).unwrap_err();
        assert_eq!((e.offset, e.kind), (20, ProtocolErrorKind::InvalidField("mode")));
        f[20] = 0;
        f[19] = 31;
        assert_eq!(
            decode_msg(&f).unwrap_err().kind,
            ProtocolErrorKind::InvalidField("gripper_pos")
        );
    }

    #[test]
    fn stream_reassembly() {
        let msgs: Vec<WireMessage> = (0..5)
            .map(|i| WireMessage::Heartbeat(Heartbeat { seq: i, t_us: u64::from(i) * 10 }))
            .collect();
        let bytes: Vec<u8> = msgs.iter().flat_map(encode_msg).collect();
        let mut d = FrameDecoder::new();
        let mut out = Vec::new();
        for chunk in bytes.chunks(3) {
            d.push(chunk);
            while let Some(m) = d.next_frame() {
                out.push(m.unwrap());
            }
        }
        assert_eq!(out, msgs);
        assert_eq!(d.buffered(), 0);
        d.push(&[1, 0, 0, 0, 77]);
        let e = d.next_frame().unwrap().unwrap_err();
        assert_eq!(e.offset, bytes.len() + 4);
    }

    #[test]
    fn seq_tracking() {
        let mut t = SeqTracker::default();
        t.check(0).unwrap();
        t.check(5).unwrap();
        assert!(t.check(5).is_err());
        assert!(t.check(3).is_err());
        t.check(6).unwrap();
    }
}
