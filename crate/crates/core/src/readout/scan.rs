use rayon::prelude::*;

use super::nodal::solve_reading;
use super::{Error, ResistorGrid, Result};
use crate::tactile::{HandMask, TactileFrame, COLS, ROWS, TAXELS};

/// Sense front end: reference resistor to ground feeding a 12-bit ADC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdcModel {
    pub bits: u8,
    pub r_ref_ohm: f64,
    /// Series resistance of each electrode lead, added to every crossing.
    pub lead_ohm: f64,
}

impl Default for AdcModel {
    fn default() -> Self {
        AdcModel { bits: 12, r_ref_ohm: 10_000.0, lead_ohm: 0.0 }
    }
}

impl AdcModel {
    pub fn new(r_ref_ohm: f64) -> Result<Self> {
        if !(r_ref_ohm.is_finite() && r_ref_ohm > 0.0) {
            return Err(Error::InvalidParameter(format!("r_ref {r_ref_ohm} must be positive and finite")));
        }
        Ok(AdcModel { r_ref_ohm, ..Default::default() })
    }

    pub fn full_scale(&self) -> u16 {
        ((1u32 << self.bits) - 1) as u16
    }

    /// Quantises a fraction of the drive voltage, rounding to nearest and
    /// clamping to the code range.
    pub fn code(&self, ratio: f64) -> u16 {
        let fs = self.full_scale() as f64;
        (ratio * fs).round().clamp(0.0, fs) as u16
    }

    /// Ideal single-path divider reading for a crossing of `r_ohm`.
    pub fn divider_code(&self, r_ohm: f64) -> u16 {
        self.code(self.r_ref_ohm / (self.r_ref_ohm + r_ohm + self.lead_ohm))
    }

    /// Crossing resistance that would read exactly `code` on the ideal divider.
    pub fn resistance_for_code(&self, code: u16) -> f64 {
        let fs = self.full_scale() as f64;
        if code == 0 {
            return f64::INFINITY;
        }
        self.r_ref_ohm * (fs / code as f64 - 1.0) - self.lead_ohm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanMode {
    /// Unselected electrodes pinned: one current path per reading.
    #[default]
    Isolated,
    /// Unselected electrodes floating: sneak paths through other crossings.
    NonIsolated,
}

impl std::str::FromStr for ScanMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "isolated" => Ok(ScanMode::Isolated),
            "nonisolated" | "non-isolated" => Ok(ScanMode::NonIsolated),
            other => Err(format!("unknown scan mode {other:?} (isolated|nonisolated)")),
        }
    }
}

/// Reads every crossing of `grid` once.
pub fn scan(grid: &ResistorGrid, adc: &AdcModel, mode: ScanMode) -> Result<TactileFrame> {
    let codes: Vec<u16> = match mode {
        ScanMode::Isolated => grid.as_slice().iter().map(|&r| adc.divider_code(r)).collect(),
        ScanMode::NonIsolated => (0..TAXELS)
            .into_par_iter()
            .map(|i| {
                let sol = solve_reading(grid, i / COLS, i % COLS, adc.r_ref_ohm, adc.lead_ohm)?;
                Ok(adc.code(sol.column_volts(i % COLS)))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(TactileFrame::new(codes, 0, 0).expect("codes clamped to 12 bits"))
}

/// Mean absolute code difference over the masked taxels.
pub fn ghost_error(reference: &TactileFrame, measured: &TactileFrame, mask: &HandMask) -> f64 {
    let mut sum = 0u64;
    let mut n = 0u64;
    for r in 0..ROWS {
        for c in 0..COLS {
            if mask.is_active(r, c) {
                sum += reference.get(r, c).abs_diff(measured.get(r, c)) as u64;
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum as f64 / n as f64
    }
}
