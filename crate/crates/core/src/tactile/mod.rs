//! Tactile frames and everything computed directly from them: the hand mask,
//! per-taxel empty-hand thresholds, valid-frame detection, N-frame
//! selection, normalization and the recording file format.

mod calibration;
mod frame;
pub mod imu;
mod mask;
mod recording;
mod selection;

use std::io;

use crate::codec::FormatError;

pub use calibration::{compute_thresholds, is_valid_frame, supra_threshold_count, CalibrationMap};
pub use frame::{normalize_frame, Normalization, TactileFrame, ADC_MAX, COLS, ROWS, TAXELS};
pub use imu::ImuSample;
pub use mask::{load_hand_mask, HandMask, HAND_CROSSINGS};
pub use recording::{load_recording, save_recording, Recording, CLASS_COUNT, EMPTY_HAND_CLASS, SESSION_COUNT};
pub use selection::{kmeans, select_frames, valid_frames, KMeans, SelectionConfig, SelectionStrategy};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("taxel ({row}, {col}) holds code {value}, above the 12-bit ADC range")]
    CodeOutOfRange { row: usize, col: usize, value: u16 },
    #[error("expected {expected} taxel values, got {actual}")]
    WrongTaxelCount { expected: usize, actual: usize },
    #[error("hand mask has {actual} active taxels, expected {expected}")]
    MaskCountMismatch { actual: usize, expected: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("only {available} valid frames available, {requested} requested")]
    NotEnoughValidFrames { available: usize, requested: usize },
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
