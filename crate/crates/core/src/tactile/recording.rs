use std::path::Path;

use super::{Error, ImuSample, Result, TactileFrame, COLS, ROWS, TAXELS};
use crate::codec::{FormatError, Reader, Writer};

/// 16 objects plus the empty hand.
pub const CLASS_COUNT: usize = 17;
/// Class index reserved for the empty hand; objects are `0..16` in manifest order.
pub const EMPTY_HAND_CLASS: u8 = 16;
pub const SESSION_COUNT: u8 = 5;

const MAGIC: &[u8; 4] = b"SHRC";
const VERSION: u16 = 1;
const FRAME_BYTES: usize = 4 + 8 + 2 * TAXELS;
const IMU_BYTES: usize = 8 + 12;

/// One labelled interaction: tactile frames plus the IMU stream recorded
/// alongside them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recording {
    label_id: u8,
    session_id: u8,
    rate_hz: u16,
    frames: Vec<TactileFrame>,
    imu: Vec<ImuSample>,
}

impl Recording {
    pub fn new(
        label_id: u8,
        session_id: u8,
        rate_hz: u16,
        frames: Vec<TactileFrame>,
        imu: Vec<ImuSample>,
    ) -> Result<Self> {
        if label_id as usize >= CLASS_COUNT {
            return Err(Error::InvalidRecording(format!("label {label_id} outside 0..{CLASS_COUNT}")));
        }
        if session_id >= SESSION_COUNT {
            return Err(Error::InvalidRecording(format!("session {session_id} outside 0..{SESSION_COUNT}")));
        }
        if let Some(w) = frames.windows(2).find(|w| w[1].seq <= w[0].seq) {
            return Err(Error::InvalidRecording(format!(
                "frame sequence numbers not strictly increasing ({} then {})",
                w[0].seq, w[1].seq
            )));
        }
        Ok(Recording { label_id, session_id, rate_hz, frames, imu })
    }

    pub fn label_id(&self) -> u8 {
        self.label_id
    }

    pub fn session_id(&self) -> u8 {
        self.session_id
    }

    pub fn rate_hz(&self) -> u16 {
        self.rate_hz
    }

    pub fn frames(&self) -> &[TactileFrame] {
        &self.frames
    }

    pub fn imu(&self) -> &[ImuSample] {
        &self.imu
    }

    pub fn into_frames(self) -> Vec<TactileFrame> {
        self.frames
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(
            24 + self.frames.len() * FRAME_BYTES + self.imu.len() * IMU_BYTES + 4,
        );
        w.bytes(MAGIC)
            .u16(VERSION)
            .u8(ROWS as u8)
            .u8(COLS as u8)
            .u8(self.label_id)
            .u8(self.session_id)
            .u16(self.rate_hz)
            .u32(self.frames.len() as u32)
            .u32(self.imu.len() as u32);
        for f in &self.frames {
            w.u32(f.seq).u64(f.timestamp_us).u16_slice(&f.values()[..]);
        }
        for s in &self.imu {
            w.u64(s.timestamp_us);
            for v in s.accel.iter().chain(s.gyro.iter()) {
                w.i16(*v);
            }
        }
        w.finish_crc32()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let (rows, cols) = (r.u8()?, r.u8()?);
        if (rows as usize, cols as usize) != (ROWS, COLS) {
            return Err(FormatError::invalid(format!("grid {rows}x{cols}, expected 32x32")).into());
        }
        let label = r.u8()?;
        let session = r.u8()?;
        let rate_hz = r.u16()?;
        let frame_count = r.u32()? as usize;
        let imu_count = r.u32()? as usize;

        // Check the declared size up front so a huge count in a short file
        // fails before allocating.
        let needed = frame_count
            .checked_mul(FRAME_BYTES)
            .and_then(|a| imu_count.checked_mul(IMU_BYTES).and_then(|b| a.checked_add(b)))
            .and_then(|n| n.checked_add(4))
            .ok_or_else(|| FormatError::invalid("declared size overflows"))?;
        if r.remaining() < needed {
            return Err(FormatError::Truncated { offset: r.position(), needed: needed - r.remaining() }.into());
        }

        let mut frames = Vec::with_capacity(frame_count);
        for _ in 0..frame_count {
            let seq = r.u32()?;
            let ts = r.u64()?;
            let values = r.u16_vec(TAXELS)?;
            let frame = TactileFrame::new(values, seq, ts)
                .map_err(|e| FormatError::invalid(format!("frame {seq}: {e}")))?;
            frames.push(frame);
        }
        let mut imu = Vec::with_capacity(imu_count);
        for _ in 0..imu_count {
            let timestamp_us = r.u64()?;
            let mut raw = [0i16; 6];
            for v in raw.iter_mut() {
                *v = r.i16()?;
            }
            imu.push(ImuSample {
                accel: [raw[0], raw[1], raw[2]],
                gyro: [raw[3], raw[4], raw[5]],
                timestamp_us,
            });
        }
        r.finish_crc32()?;
        Recording::new(label, session, rate_hz, frames, imu).map_err(|e| match e {
            Error::InvalidRecording(msg) => FormatError::Invalid(msg).into(),
            e => e,
        })
    }
}

pub fn save_recording(rec: &Recording, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, rec.to_bytes())?;
    Ok(())
}

pub fn load_recording(path: impl AsRef<Path>) -> Result<Recording> {
    Recording::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(seq: u32) -> TactileFrame {
        let values = (0..TAXELS).map(|i| ((i as u32 * 7 + seq) % 4096) as u16).collect();
        TactileFrame::new(values, seq, seq as u64 * 10_000).unwrap()
    }

    #[test]
    fn one_frame_round_trip() {
        let rec = Recording::new(3, 1, 100, vec![frame(0)], vec![]).unwrap();
        assert_eq!(Recording::from_bytes(&rec.to_bytes()).unwrap(), rec);
    }

    #[test]
    fn full_buffer_round_trip_with_imu() {
        let frames: Vec<_> = (0..4096).map(frame).collect();
        let imu: Vec<_> = (0..4096)
            .map(|i| ImuSample {
                accel: [i as i16, -(i as i16), 16384],
                gyro: [i16::MIN, i16::MAX, 0],
                timestamp_us: i * 10_000,
            })
            .collect();
        let rec = Recording::new(EMPTY_HAND_CLASS, 4, 100, frames, imu).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.shrc");
        save_recording(&rec, &path).unwrap();
        assert_eq!(load_recording(&path).unwrap(), rec);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let rec = Recording::new(0, 0, 100, (0..3).map(frame).collect(), vec![]).unwrap();
        let bytes = rec.to_bytes();
        for cut in [0, 5, 24, 100, bytes.len() - 1] {
            match Recording::from_bytes(&bytes[..cut]) {
                Err(Error::Format(_)) => {}
                other => panic!("cut at {cut}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(Recording::new(17, 0, 100, vec![], vec![]).is_err());
        assert!(Recording::new(0, 5, 100, vec![], vec![]).is_err());
        assert!(Recording::new(0, 0, 100, vec![frame(2), frame(2)], vec![]).is_err());
        assert!(Recording::new(0, 0, 100, vec![frame(3), frame(2)], vec![]).is_err());
    }

    fn arb_recording() -> impl Strategy<Value = Recording> {
        (
            0u8..17,
            0u8..5,
            any::<u16>(),
            prop::collection::vec((1u32..1000, any::<u64>(), prop::collection::vec(0u16..=4095, TAXELS)), 0..4),
            prop::collection::vec((any::<[i16; 3]>(), any::<[i16; 3]>(), any::<u64>()), 0..20),
        )
            .prop_map(|(label, session, rate, raw_frames, raw_imu)| {
                let mut seq = 0u32;
                let frames = raw_frames
                    .into_iter()
                    .map(|(step, ts, v)| {
                        seq += step;
                        TactileFrame::new(v, seq, ts).unwrap()
                    })
                    .collect();
                let imu = raw_imu
                    .into_iter()
                    .map(|(accel, gyro, timestamp_us)| ImuSample { accel, gyro, timestamp_us })
                    .collect();
                Recording::new(label, session, rate, frames, imu).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn round_trip_is_identity(rec in arb_recording()) {
            prop_assert_eq!(Recording::from_bytes(&rec.to_bytes()).unwrap(), rec);
        }
    }
}
