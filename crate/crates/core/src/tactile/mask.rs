use std::path::Path;

use super::{Error, Result, COLS, TAXELS};
use crate::codec::{FormatError, Reader, Writer};

/// Electrode crossings that physically exist on the hand-shaped laminate.
pub const HAND_CROSSINGS: usize = 548;

const MAGIC: &[u8; 4] = b"SHMK";
const CANONICAL: &[u8] = include_bytes!("../../data/hand_mask.shmk");

/// Which of the 1024 grid positions are real sensor crossings.
#[derive(Clone, PartialEq, Eq)]
pub struct HandMask {
    active: Box<[bool; TAXELS]>,
}

impl std::fmt::Debug for HandMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "HandMask({} active)", self.count())
    }
}

impl HandMask {
    /// Builds a mask that must contain exactly `expected` active taxels.
    pub fn with_expected_count(active: Vec<bool>, expected: usize) -> Result<Self> {
        if active.len() != TAXELS {
            return Err(Error::WrongTaxelCount { expected: TAXELS, actual: active.len() });
        }
        let actual = active.iter().filter(|&&a| a).count();
        if actual != expected {
            return Err(Error::MaskCountMismatch { actual, expected });
        }
        Ok(HandMask { active: active.into_boxed_slice().try_into().expect("length checked") })
    }

    pub fn new(active: Vec<bool>) -> Result<Self> {
        Self::with_expected_count(active, HAND_CROSSINGS)
    }

    /// The hand shape shipped in `data/hand_mask.shmk`.
    pub fn canonical() -> Self {
        Self::from_bytes(CANONICAL).expect("bundled hand mask is valid")
    }

    pub fn is_active(&self, row: usize, col: usize) -> bool {
        self.active[row * COLS + col]
    }

    pub fn as_slice(&self) -> &[bool; TAXELS] {
        &self.active
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Flat indices of active taxels, ascending.
    pub fn indices(&self) -> Vec<usize> {
        (0..TAXELS).filter(|&i| self.active[i]).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(4 + TAXELS + 4);
        w.bytes(MAGIC);
        for &a in self.active.iter() {
            w.u8(a as u8);
        }
        w.finish_crc32()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_bytes_with_count(bytes, HAND_CROSSINGS)
    }

    pub fn from_bytes_with_count(bytes: &[u8], expected: usize) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MAGIC)?;
        let raw = r.take(TAXELS)?;
        let active = raw
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(FormatError::invalid(format!("mask byte {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        r.finish_crc32()?;
        Self::with_expected_count(active, expected)
    }
}

pub fn load_hand_mask(path: impl AsRef<Path>) -> Result<HandMask> {
    HandMask::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_file(active: bool) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC).bytes(&[active as u8; TAXELS]);
        w.finish_crc32()
    }

    #[test]
    fn canonical_mask_has_548_crossings() {
        let m = HandMask::canonical();
        assert_eq!(m.count(), 548);
        assert_eq!(HandMask::from_bytes(&m.to_bytes()).unwrap(), m);
    }

    #[test]
    fn full_and_empty_grids_are_rejected() {
        match HandMask::from_bytes(&mask_file(true)) {
            Err(Error::MaskCountMismatch { actual: 1024, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match HandMask::from_bytes(&mask_file(false)) {
            Err(Error::MaskCountMismatch { actual: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corrupt_files_fail_closed() {
        let mut bytes = HandMask::canonical().to_bytes();
        bytes[10] = 2;
        assert!(matches!(HandMask::from_bytes(&bytes), Err(Error::Format(FormatError::Invalid(_)))));

        let bytes = HandMask::canonical().to_bytes();
        assert!(matches!(
            HandMask::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));

        let mut bytes = HandMask::canonical().to_bytes();
        let n = bytes.len();
        bytes[n - 1] ^= 0xFF;
        assert!(matches!(
            HandMask::from_bytes(&bytes),
            Err(Error::Format(FormatError::ChecksumMismatch { .. }))
        ));
    }
}
