//! Resistive crossbar readout.
//!
//! The sensor is a 32×32 grid of force-sensitive crossings between row and
//! column electrodes. Each crossing is a resistor; pressing it lowers the
//! resistance. A reading drives one row and senses one column through a
//! reference resistor into a 12-bit ADC.
//!
//! With the isolation front end every unselected electrode is pinned, so only
//! the selected crossing carries current and the reading is a plain voltage
//! divider. Without it the unselected electrodes float and current also
//! sneaks through chains of other crossings, which shows up as phantom
//! ("ghost") readings at untouched taxels. [`scan`] models both by solving the
//! full electrode network.

mod grid;
mod law;
pub mod nodal;
mod scan;
mod scenario;

pub use grid::{frame_from_press_map, Press, ResistorGrid};
pub use law::{resistance_from_force, FsrLaw};
pub use scan::{ghost_error, scan, AdcModel, ScanMode};
pub use scenario::Scenario;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("force must be non-negative, got {0} N")]
    NegativeForce(f64),
    #[error("crossing ({row}, {col}) outside the 32x32 grid")]
    OutOfRange { row: usize, col: usize },
    #[error("invalid resistance {value} ohm at ({row}, {col}); must be positive and finite")]
    InvalidResistance { row: usize, col: usize, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("singular network matrix (pivot {pivot:e} at column {column})")]
    SingularNetwork { column: usize, pivot: f64 },
    #[error("scenario line {line}: {message}")]
    Scenario { line: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
