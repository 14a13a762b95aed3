use super::{Error, Result};

/// Saturating-hyperbolic force → resistance law:
/// `R(f) = r_min + (r_open - r_min) / (1 + f / f0)`.
///
/// Defaults (50 kΩ open, 500 Ω saturated, 1 N softness) are placeholders in
/// the range of carbon-loaded polymer films; the real laminate was never
/// characterised, so override them from a scenario file when you have data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsrLaw {
    pub r_open_ohm: f64,
    pub r_min_ohm: f64,
    pub f0_newton: f64,
}

impl Default for FsrLaw {
    fn default() -> Self {
        FsrLaw { r_open_ohm: 50_000.0, r_min_ohm: 500.0, f0_newton: 1.0 }
    }
}

impl FsrLaw {
    pub fn new(r_open_ohm: f64, r_min_ohm: f64, f0_newton: f64) -> Result<Self> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !(finite_pos(r_open_ohm) && finite_pos(r_min_ohm) && finite_pos(f0_newton)) {
            return Err(Error::InvalidParameter("law parameters must be positive and finite".into()));
        }
        if r_min_ohm >= r_open_ohm {
            return Err(Error::InvalidParameter(format!(
                "r_min ({r_min_ohm}) must be below r_open ({r_open_ohm})"
            )));
        }
        Ok(FsrLaw { r_open_ohm, r_min_ohm, f0_newton })
    }

    pub fn resistance(&self, force_newton: f64) -> Result<f64> {
        resistance_from_force(self, force_newton)
    }
}

pub fn resistance_from_force(law: &FsrLaw, force_newton: f64) -> Result<f64> {
    if force_newton.is_nan() || force_newton < 0.0 {
        return Err(Error::NegativeForce(force_newton));
    }
    if force_newton.is_infinite() {
        return Ok(law.r_min_ohm);
    }
    Ok(law.r_min_ohm + (law.r_open_ohm - law.r_min_ohm) / (1.0 + force_newton / law.f0_newton))
}
