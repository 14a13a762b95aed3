//! Hardware-free tactile glove stack.
//!
//! * [`tactile`]: frames, hand mask, empty-hand calibration, frame selection
//!   and the recording format.
//! * [`readout`]: resistive crossbar physics, isolated and sneak-path scans.
//! * [`device`]: tick-driven firmware state machine and its wire protocol.
//! * [`nn`]: reduced residual CNN with IMU fusion, static arena planner,
//!   F32 and Q15 kernels, weight and golden files.
//! * [`cli`]: the `smarthand` command-line front end.

pub mod codec;
pub mod tactile;
pub mod nn;
pub mod readout;
pub mod device;
pub mod cli;
