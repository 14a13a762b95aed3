use std::path::Path;

use super::{Error, Result, TactileFrame, ADC_MAX, TAXELS};
use crate::codec::{FormatError, Reader, Writer};

const MAGIC: &[u8; 4] = b"SHCA";
const VERSION: u16 = 1;

/// Per-taxel empty-hand thresholds: the highest code each taxel produced
/// without object contact.
#[derive(Clone, PartialEq, Eq)]
pub struct CalibrationMap {
    thresholds: Box<[u16; TAXELS]>,
    source_frame_count: u32,
}

impl std::fmt::Debug for CalibrationMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CalibrationMap")
            .field("source_frame_count", &self.source_frame_count)
            .field("max_threshold", &self.thresholds.iter().max())
            .finish()
    }
}

impl CalibrationMap {
    pub fn from_thresholds(thresholds: Vec<u16>, source_frame_count: u32) -> Result<Self> {
        if thresholds.len() != TAXELS {
            return Err(Error::WrongTaxelCount { expected: TAXELS, actual: thresholds.len() });
        }
        if let Some(i) = thresholds.iter().position(|&t| t > ADC_MAX) {
            return Err(Error::CodeOutOfRange { row: i / 32, col: i % 32, value: thresholds[i] });
        }
        Ok(CalibrationMap {
            thresholds: thresholds.into_boxed_slice().try_into().expect("length checked"),
            source_frame_count,
        })
    }

    pub fn thresholds(&self) -> &[u16; TAXELS] {
        &self.thresholds
    }

    pub fn threshold(&self, row: usize, col: usize) -> u16 {
        self.thresholds[row * 32 + col]
    }

    pub fn source_frame_count(&self) -> u32 {
        self.source_frame_count
    }

    /// Folds more empty-hand frames into the map. Thresholds never decrease.
    pub fn absorb<'a>(&mut self, frames: impl IntoIterator<Item = &'a TactileFrame>) {
        for frame in frames {
            for (t, &v) in self.thresholds.iter_mut().zip(frame.values().iter()) {
                *t = (*t).max(v);
            }
            self.source_frame_count = self.source_frame_count.saturating_add(1);
        }
    }

    /// Elementwise maximum; equal to calibrating on the union of both sources.
    pub fn merge(&self, other: &CalibrationMap) -> CalibrationMap {
        let mut out = self.clone();
        for (t, &o) in out.thresholds.iter_mut().zip(other.thresholds.iter()) {
            *t = (*t).max(o);
        }
        out.source_frame_count = self.source_frame_count.saturating_add(other.source_frame_count);
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(14 + 2 * TAXELS);
        w.bytes(MAGIC).u16(VERSION).u32(self.source_frame_count).u16_slice(&self.thresholds[..]);
        w.finish_crc32()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let count = r.u32()?;
        let thresholds = r.u16_vec(TAXELS)?;
        r.finish_crc32()?;
        Self::from_thresholds(thresholds, count).map_err(|e| match e {
            Error::CodeOutOfRange { value, .. } => {
                FormatError::invalid(format!("threshold {value} exceeds 12-bit range")).into()
            }
            e => e,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Per-taxel maximum over a non-empty set of empty-hand frames.
pub fn compute_thresholds(empty_frames: &[TactileFrame]) -> Result<CalibrationMap> {
    if empty_frames.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut map = CalibrationMap { thresholds: Box::new([0; TAXELS]), source_frame_count: 0 };
    map.absorb(empty_frames);
    Ok(map)
}

/// Number of taxels strictly above their threshold.
pub fn supra_threshold_count(frame: &TactileFrame, calib: &CalibrationMap) -> usize {
    frame.values().iter().zip(calib.thresholds.iter()).filter(|(v, t)| v > t).count()
}

/// A frame shows contact when at least `k` taxels exceed their threshold.
/// Equality does not count. `k == 0` accepts every frame.
pub fn is_valid_frame(frame: &TactileFrame, calib: &CalibrationMap, k: usize) -> bool {
    supra_threshold_count(frame, calib) >= k
}
