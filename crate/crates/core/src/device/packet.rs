//! Wire framing:
//!
//! ```text
//! 0xAA 0x55 | kind:u8 | seq:u32 | payload | crc:u16
//! ```
//!
//! Integers are little-endian. The payload length is fixed per kind, so there
//! is no length field. The CRC is CRC-16/CCITT-FALSE (poly 0x1021, init
//! 0xFFFF) over `kind..payload`. See `docs/protocol.md` for byte-level
//! examples.

use super::DeviceState;
use crate::codec::CRC16;
use crate::tactile::{ImuSample, TactileFrame, CLASS_COUNT, TAXELS};

pub const SYNC: [u8; 2] = [0xAA, 0x55];
const HEADER: usize = 2 + 1 + 4;
const TRAILER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Frame = 0,
    Imu = 1,
    Inference = 2,
    Ack = 3,
    Dump = 4,
}

impl PacketKind {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => PacketKind::Frame,
            1 => PacketKind::Imu,
            2 => PacketKind::Inference,
            3 => PacketKind::Ack,
            4 => PacketKind::Dump,
            _ => return None,
        })
    }

    pub fn payload_len(self) -> usize {
        match self {
            PacketKind::Frame => 8 + 2 * TAXELS,
            PacketKind::Imu => 8 + 12,
            PacketKind::Inference => 1 + 3 + 4 * CLASS_COUNT,
            PacketKind::Ack => 2,
            PacketKind::Dump => 2 + 2 + 8 + 2 * TAXELS,
        }
    }

    /// Full on-wire size including sync, header and CRC.
    pub fn wire_len(self) -> usize {
        HEADER + self.payload_len() + TRAILER
    }
}

/// One device-to-host message. Frame and dump packets carry the frame's own
/// sequence number and timestamp; inference packets carry the sequence
/// number of the frame they classified.
#[derive(Debug, Clone, PartialEq)]
pub enum DevicePacket {
    Frame(TactileFrame),
    Imu { seq: u32, sample: ImuSample },
    Inference { seq: u32, class: u8, top3: [u8; 3], probabilities: [f32; CLASS_COUNT] },
    Ack { seq: u32, command: u8, state: DeviceState },
    /// Frame `index` of `total` from the collection buffer.
    Dump { index: u16, total: u16, frame: TactileFrame },
}

impl DevicePacket {
    pub fn kind(&self) -> PacketKind {
        match self {
            DevicePacket::Frame(_) => PacketKind::Frame,
            DevicePacket::Imu { .. } => PacketKind::Imu,
            DevicePacket::Inference { .. } => PacketKind::Inference,
            DevicePacket::Ack { .. } => PacketKind::Ack,
            DevicePacket::Dump { .. } => PacketKind::Dump,
        }
    }

    pub fn seq(&self) -> u32 {
        match self {
            DevicePacket::Frame(f) | DevicePacket::Dump { frame: f, .. } => f.seq,
            DevicePacket::Imu { seq, .. } | DevicePacket::Inference { seq, .. } | DevicePacket::Ack { seq, .. } => *seq,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let kind = self.kind();
        let mut out = Vec::with_capacity(kind.wire_len());
        out.extend_from_slice(&SYNC);
        out.push(kind as u8);
        out.extend_from_slice(&self.seq().to_le_bytes());
        let codes = |out: &mut Vec<u8>, f: &TactileFrame| {
            out.extend_from_slice(&f.timestamp_us.to_le_bytes());
            for v in f.values().iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        match self {
            DevicePacket::Frame(f) => codes(&mut out, f),
            DevicePacket::Imu { sample, .. } => {
                out.extend_from_slice(&sample.timestamp_us.to_le_bytes());
                for v in sample.accel.iter().chain(&sample.gyro) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            DevicePacket::Inference { class, top3, probabilities, .. } => {
                out.push(*class);
                out.extend_from_slice(top3);
                for p in probabilities {
                    out.extend_from_slice(&p.to_le_bytes());
                }
            }
            DevicePacket::Ack { command, state, .. } => {
                out.push(*command);
                out.push(*state as u8);
            }
            DevicePacket::Dump { index, total, frame } => {
                out.extend_from_slice(&index.to_le_bytes());
                out.extend_from_slice(&total.to_le_bytes());
                codes(&mut out, frame);
            }
        }
        let crc = CRC16.checksum(&out[2..]);
        out.extend_from_slice(&crc.to_le_bytes());
        debug_assert_eq!(out.len(), kind.wire_len());
        out
    }
}

/// Why [`decode_packet`] did not return a packet. Every variant except
/// `Truncated` says how many leading bytes the caller should drop before
/// trying again.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("incomplete packet: {needed} more bytes needed")]
    Truncated { needed: usize },
    #[error("no sync marker in {discard} bytes")]
    NoSync { discard: usize },
    #[error("unknown packet kind {kind}")]
    InvalidKind { kind: u8, discard: usize },
    #[error("CRC mismatch: stored {stored:#06x}, computed {computed:#06x}")]
    CrcMismatch { stored: u16, computed: u16, discard: usize },
    #[error("malformed payload: {reason}")]
    InvalidPayload { reason: String, discard: usize },
}

impl DecodeError {
    /// Bytes to drop before the next attempt (0 means wait for more input).
    pub fn discard(&self) -> usize {
        match self {
            DecodeError::Truncated { .. } => 0,
            DecodeError::NoSync { discard }
            | DecodeError::InvalidKind { discard, .. }
            | DecodeError::CrcMismatch { discard, .. }
            | DecodeError::InvalidPayload { discard, .. } => *discard,
        }
    }
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b[..4].try_into().expect("4 bytes"))
}

fn le_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b[..8].try_into().expect("8 bytes"))
}

fn frame_at(b: &[u8], seq: u32) -> Result<TactileFrame, String> {
    let ts = le_u64(b);
    let codes = b[8..8 + 2 * TAXELS].chunks_exact(2).map(le_u16).collect();
    TactileFrame::new(codes, seq, ts).map_err(|e| e.to_string())
}

/// Decodes the first packet in `stream`, skipping any bytes before the first
/// sync marker. Returns the packet and the number of bytes consumed
/// (including skipped garbage).
pub fn decode_packet(stream: &[u8]) -> Result<(DevicePacket, usize), DecodeError> {
    let Some(start) = stream.windows(2).position(|w| w == SYNC) else {
        // a trailing 0xAA may be the first half of the next marker
        let keep = usize::from(stream.last() == Some(&SYNC[0]));
        return Err(DecodeError::NoSync { discard: stream.len() - keep });
    };
    let s = &stream[start..];
    if s.len() < HEADER {
        return Err(DecodeError::Truncated { needed: HEADER - s.len() });
    }
    let skip = start + 1;
    let kind = PacketKind::from_u8(s[2]).ok_or(DecodeError::InvalidKind { kind: s[2], discard: skip })?;
    let total = kind.wire_len();
    if s.len() < total {
        return Err(DecodeError::Truncated { needed: total - s.len() });
    }
    let body = &s[2..total - TRAILER];
    let stored = le_u16(&s[total - TRAILER..]);
    let computed = CRC16.checksum(body);
    if stored != computed {
        return Err(DecodeError::CrcMismatch { stored, computed, discard: skip });
    }
    let seq = le_u32(&s[3..]);
    let p = &s[HEADER..total - TRAILER];
    let bad = |reason: String| DecodeError::InvalidPayload { reason, discard: skip };
    let packet = match kind {
        PacketKind::Frame => DevicePacket::Frame(frame_at(p, seq).map_err(bad)?),
        PacketKind::Imu => {
            let v: Vec<i16> = p[8..20].chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
            DevicePacket::Imu {
                seq,
                sample: ImuSample { accel: [v[0], v[1], v[2]], gyro: [v[3], v[4], v[5]], timestamp_us: le_u64(p) },
            }
        }
        PacketKind::Inference => {
            let mut probabilities = [0.0f32; CLASS_COUNT];
            for (i, c) in p[4..].chunks_exact(4).enumerate() {
                probabilities[i] = f32::from_le_bytes(c.try_into().expect("4 bytes"));
            }
            DevicePacket::Inference { seq, class: p[0], top3: [p[1], p[2], p[3]], probabilities }
        }
        PacketKind::Ack => {
            let state = DeviceState::from_u8(p[1]).ok_or_else(|| bad(format!("unknown device state {}", p[1])))?;
            DevicePacket::Ack { seq, command: p[0], state }
        }
        PacketKind::Dump => {
            DevicePacket::Dump { index: le_u16(p), total: le_u16(&p[2..]), frame: frame_at(&p[4..], seq).map_err(bad)? }
        }
    };
    Ok((packet, start + total))
}

/// Incremental decoder for a byte stream arriving in arbitrary chunks.
/// Corrupt or unframed bytes are dropped and counted; decoding resumes at
/// the next sync marker.
#[derive(Debug, Default, Clone)]
pub struct PacketDecoder {
    buf: Vec<u8>,
    errors: Vec<DecodeError>,
    dropped: usize,
}

impl PacketDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `bytes` and returns every packet now complete.
    pub fn feed(&mut self, bytes: &[u8]) -> Vec<DevicePacket> {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        let mut pos = 0;
        loop {
            match decode_packet(&self.buf[pos..]) {
                Ok((p, used)) => {
                    self.dropped += used - p.kind().wire_len();
                    pos += used;
                    out.push(p);
                }
                Err(DecodeError::Truncated { .. }) => break,
                Err(e) => {
                    let n = e.discard();
                    if !matches!(e, DecodeError::NoSync { .. }) {
                        self.errors.push(e);
                    }
                    self.dropped += n;
                    pos += n;
                    if n == 0 {
                        break;
                    }
                }
            }
        }
        self.buf.drain(..pos);
        out
    }

    /// CRC, kind and payload errors seen so far.
    pub fn errors(&self) -> &[DecodeError] {
        &self.errors
    }

    /// Bytes discarded while hunting for packets.
    pub fn dropped_bytes(&self) -> usize {
        self.dropped
    }

    /// Bytes waiting for the rest of a packet.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }
}
