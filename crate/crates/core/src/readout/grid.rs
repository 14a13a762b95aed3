use super::{resistance_from_force, Error, FsrLaw, Result};
use crate::tactile::{COLS, ROWS, TAXELS};

/// Crossing resistances of the full 32×32 electrode grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResistorGrid {
    resistance_ohm: Vec<f64>,
    r_open_ohm: f64,
}

impl ResistorGrid {
    pub fn uniform(r_open_ohm: f64) -> Result<Self> {
        Self::from_resistances(vec![r_open_ohm; TAXELS], r_open_ohm)
    }

    pub fn from_resistances(resistance_ohm: Vec<f64>, r_open_ohm: f64) -> Result<Self> {
        if !(r_open_ohm.is_finite() && r_open_ohm > 0.0) {
            return Err(Error::InvalidParameter(format!("r_open {r_open_ohm} must be positive and finite")));
        }
        if resistance_ohm.len() != TAXELS {
            return Err(Error::InvalidParameter(format!("{} resistances, expected {TAXELS}", resistance_ohm.len())));
        }
        if let Some(i) = resistance_ohm.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidResistance { row: i / COLS, col: i % COLS, value: resistance_ohm[i] });
        }
        Ok(ResistorGrid { resistance_ohm, r_open_ohm })
    }

    pub fn r_open_ohm(&self) -> f64 {
        self.r_open_ohm
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.resistance_ohm[row * COLS + col]
    }

    pub fn set(&mut self, row: usize, col: usize, ohm: f64) -> Result<()> {
        if row >= ROWS || col >= COLS {
            return Err(Error::OutOfRange { row, col });
        }
        if !(ohm.is_finite() && ohm > 0.0) {
            return Err(Error::InvalidResistance { row, col, value: ohm });
        }
        self.resistance_ohm[row * COLS + col] = ohm;
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.resistance_ohm
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Press {
    pub row: usize,
    pub col: usize,
    pub force_newton: f64,
}

impl Press {
    pub fn new(row: usize, col: usize, force_newton: f64) -> Self {
        Press { row, col, force_newton }
    }
}

/// Builds a grid from point presses. Presses on the same crossing have their
/// forces summed before the law is applied; untouched crossings sit at
/// `law.r_open_ohm`.
pub fn frame_from_press_map(presses: &[Press], law: &FsrLaw) -> Result<ResistorGrid> {
    let mut force = vec![0.0f64; TAXELS];
    let mut touched = vec![false; TAXELS];
    for p in presses {
        if p.row >= ROWS || p.col >= COLS {
            return Err(Error::OutOfRange { row: p.row, col: p.col });
        }
        if p.force_newton.is_nan() || p.force_newton < 0.0 {
            return Err(Error::NegativeForce(p.force_newton));
        }
        force[p.row * COLS + p.col] += p.force_newton;
        touched[p.row * COLS + p.col] = true;
    }
    let resistances = force
        .iter()
        .zip(&touched)
        .map(|(&f, &t)| if t { resistance_from_force(law, f) } else { Ok(law.r_open_ohm) })
        .collect::<Result<Vec<_>>>()?;
    ResistorGrid::from_resistances(resistances, law.r_open_ohm)
}
