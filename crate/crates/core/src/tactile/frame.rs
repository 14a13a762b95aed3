use super::{CalibrationMap, Error, Result};

pub const ROWS: usize = 32;
pub const COLS: usize = 32;
pub const TAXELS: usize = ROWS * COLS;
/// Full scale of the 12-bit ADC.
pub const ADC_MAX: u16 = 4095;

/// One 32×32 grid of 12-bit ADC codes, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct TactileFrame {
    values: Box<[u16; TAXELS]>,
    pub seq: u32,
    pub timestamp_us: u64,
}

impl std::fmt::Debug for TactileFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sum: u64 = self.values.iter().map(|&v| v as u64).sum();
        f.debug_struct("TactileFrame")
            .field("seq", &self.seq)
            .field("timestamp_us", &self.timestamp_us)
            .field("code_sum", &sum)
            .finish()
    }
}

impl TactileFrame {
    pub fn new(values: Vec<u16>, seq: u32, timestamp_us: u64) -> Result<Self> {
        if values.len() != TAXELS {
            return Err(Error::WrongTaxelCount { expected: TAXELS, actual: values.len() });
        }
        if let Some(i) = values.iter().position(|&v| v > ADC_MAX) {
            return Err(Error::CodeOutOfRange { row: i / COLS, col: i % COLS, value: values[i] });
        }
        let values: Box<[u16; TAXELS]> = values.into_boxed_slice().try_into().expect("length checked");
        Ok(TactileFrame { values, seq, timestamp_us })
    }

    /// A frame with every taxel at `code` (clamped to the ADC range).
    pub fn filled(code: u16, seq: u32, timestamp_us: u64) -> Self {
        TactileFrame { values: Box::new([code.min(ADC_MAX); TAXELS]), seq, timestamp_us }
    }

    pub fn zeros(seq: u32, timestamp_us: u64) -> Self {
        Self::filled(0, seq, timestamp_us)
    }

    pub fn values(&self) -> &[u16; TAXELS] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.values[row * COLS + col]
    }

    /// Sets one taxel, clamping to the ADC range.
    pub fn set(&mut self, row: usize, col: usize, code: u16) {
        self.values[row * COLS + col] = code.min(ADC_MAX);
    }

    pub fn with_meta(mut self, seq: u32, timestamp_us: u64) -> Self {
        self.seq = seq;
        self.timestamp_us = timestamp_us;
        self
    }
}

/// How raw codes are mapped to network inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Normalization {
    /// `code / 4095`.
    #[default]
    FullScale,
    /// `max(code - threshold, 0) / 4095`, removing the empty-hand baseline.
    BaselineSubtracted,
}

/// Maps every code onto `[0, 1]` by dividing by the ADC full scale.
pub fn normalize_frame(frame: &TactileFrame) -> Vec<f32> {
    frame.values.iter().map(|&v| v as f32 / ADC_MAX as f32).collect()
}

impl Normalization {
    pub fn apply(self, frame: &TactileFrame, calib: Option<&CalibrationMap>) -> Vec<f32> {
        match (self, calib) {
            (Normalization::BaselineSubtracted, Some(calib)) => frame
                .values
                .iter()
                .zip(calib.thresholds())
                .map(|(&v, &t)| v.saturating_sub(t) as f32 / ADC_MAX as f32)
                .collect(),
            _ => normalize_frame(frame),
        }
    }
}
